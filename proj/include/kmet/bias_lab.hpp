#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kmet/error.hpp"
#include "kmet/estimators.hpp"
#include "kmet/linalg.hpp"
#include "kmet/matrix.hpp"
#include "kmet/parallel.hpp"
#include "kmet/rng.hpp"
#include "kmet/running_stats.hpp"
#include "kmet/scores.hpp"
#include "kmet/special.hpp"

namespace kmet {

struct BiasRow {
  std::string label;
  double n = 0.0;  // sample size (or repetition count) the row describes
  double mean = 0.0;
  double std_dev = 0.0;
  double std_err = 0.0;
  std::optional<double> analytic;
};

struct BiasReport {
  std::string experiment;
  std::vector<std::pair<std::string, double>> params;
  std::vector<BiasRow> rows;
};

namespace detail {

inline BiasRow summarize(std::string label, double n, const std::vector<double>& values,
                         std::optional<double> analytic) {
  RunningMeanVar acc;
  for (double v : values) acc.add(v);
  return BiasRow{std::move(label), n, acc.mean(), acc.std_sample(), acc.std_error(), analytic};
}

}  // namespace detail

// Data-splitting bias of the empirical Wasserstein critic: P = N(1,1),
// Q = N(0,1), one training pair selects f(t) = t or f(t) = -t, and the
// population objective of the selected critic is +-1. The expected estimate is
// 1 - 2 Phi(-1/sqrt(2)) ~= 0.5205, strictly below the true distance 1. The
// "stubborn" row keeps f(t) = t regardless and scores exactly 1.
inline BiasReport wasserstein_splitting_bias(std::size_t reps, RngState& rng,
                                             unsigned threads = 1) {
  if (reps < 1) fail(ErrorCode::invalid_input, "wasserstein_splitting_bias: reps >= 1");
  std::vector<double> values(reps);
  const RngState base = rng;
  parallel_for(reps, threads, [&](std::size_t r) {
    RngState local = base.substream(r);
    const double x_tr = 1.0 + local.gaussian();
    const double y_tr = local.gaussian();
    values[r] = x_tr > y_tr ? 1.0 : -1.0;
  });
  rng = base.substream(reps);

  const double analytic = 1.0 - 2.0 * std_normal_cdf(-1.0 / std::sqrt(2.0));
  BiasReport report;
  report.experiment = "wasserstein";
  report.params = {{"reps", static_cast<double>(reps)}};
  report.rows.push_back(
      detail::summarize("split", static_cast<double>(reps), values, analytic));
  report.rows.push_back(BiasRow{"stubborn", static_cast<double>(reps), 1.0, 0.0, 0.0, 1.0});
  return report;
}

// Data-splitting bias of the maximized linear-kernel MMD: P = N((1,0), I),
// Q = N((0,0), I), critic h(theta, x) = theta^T x with ||theta|| = 1. Each
// repetition maximizes the training U-statistic (top eigenvector of the
// symmetrized quadratic form) and records the population objective
// theta_1^2 of the selected direction; the supremum is 1.
inline BiasReport max_mmd_splitting_bias(std::size_t m_tr, std::size_t n_tr, std::size_t reps,
                                         RngState& rng, unsigned threads = 1) {
  if (m_tr < 2 || n_tr < 2)
    fail(ErrorCode::invalid_input, "max_mmd_splitting_bias: training sizes >= 2");
  if (reps < 1) fail(ErrorCode::invalid_input, "max_mmd_splitting_bias: reps >= 1");

  std::vector<double> values(reps);
  const RngState base = rng;
  parallel_for(reps, threads, [&](std::size_t r) {
    RngState local = base.substream(r);
    double sx[2] = {0, 0}, sy[2] = {0, 0};
    double xxt[3] = {0, 0, 0}, yyt[3] = {0, 0, 0};  // packed upper: (0,0),(0,1),(1,1)
    for (std::size_t i = 0; i < m_tr; ++i) {
      const double a = 1.0 + local.gaussian();
      const double b = local.gaussian();
      sx[0] += a;
      sx[1] += b;
      xxt[0] += a * a;
      xxt[1] += a * b;
      xxt[2] += b * b;
    }
    for (std::size_t j = 0; j < n_tr; ++j) {
      const double a = local.gaussian();
      const double b = local.gaussian();
      sy[0] += a;
      sy[1] += b;
      yyt[0] += a * a;
      yyt[1] += a * b;
      yyt[2] += b * b;
    }
    const double cm = static_cast<double>(m_tr) * static_cast<double>(m_tr - 1);
    const double cn = static_cast<double>(n_tr) * static_cast<double>(n_tr - 1);
    const double cmn = static_cast<double>(m_tr) * static_cast<double>(n_tr);
    SymMatrix a(2);
    a.set(0, 0, (sx[0] * sx[0] - xxt[0]) / cm + (sy[0] * sy[0] - yyt[0]) / cn -
                    2.0 * sx[0] * sy[0] / cmn);
    a.set(1, 1, (sx[1] * sx[1] - xxt[2]) / cm + (sy[1] * sy[1] - yyt[2]) / cn -
                    2.0 * sx[1] * sy[1] / cmn);
    a.set(0, 1, (sx[0] * sx[1] - xxt[1]) / cm + (sy[0] * sy[1] - yyt[1]) / cn -
                    (sx[0] * sy[1] + sx[1] * sy[0]) / cmn);
    const EigResult eig = sym_eig(a);
    const double theta1 = eig.eigenvectors(0, 0);  // top eigenvector, first coordinate
    values[r] = theta1 * theta1;
  });
  rng = base.substream(reps);

  BiasReport report;
  report.experiment = "max-mmd";
  report.params = {{"m_tr", static_cast<double>(m_tr)},
                   {"n_tr", static_cast<double>(n_tr)},
                   {"reps", static_cast<double>(reps)},
                   {"supremum", 1.0}};
  report.rows.push_back(
      detail::summarize("theta1_sq", static_cast<double>(m_tr), values, std::nullopt));
  return report;
}

enum class CurveMetric { kid, fid };
enum class DistPair { same, shifted };

// Per-n sampling distribution of KID or FID between fresh Gaussian samples:
// the synthetic analog of the train-vs-test bias curves. `shifted` offsets the
// second sample by +1 on the first coordinate (population FID exactly 1).
inline BiasReport score_bias_curves(CurveMetric metric, std::size_t d, DistPair pair,
                                    std::vector<std::size_t> n_list, std::size_t reps,
                                    RngState& rng, unsigned threads = 1) {
  if (d < 1 || n_list.empty() || reps < 2)
    fail(ErrorCode::invalid_input, "score_bias_curves: bad parameters");
  std::sort(n_list.begin(), n_list.end());
  const double offset = pair == DistPair::shifted ? 1.0 : 0.0;

  BiasReport report;
  report.experiment = metric == CurveMetric::kid ? "kid-curve" : "fid-curve";
  report.params = {{"d", static_cast<double>(d)},
                   {"reps", static_cast<double>(reps)},
                   {"offset", offset}};

  const RngState base = rng;
  for (std::size_t t = 0; t < n_list.size(); ++t) {
    const std::size_t n = n_list[t];
    if (n < 2) fail(ErrorCode::invalid_input, "score_bias_curves: n must be >= 2");
    const RngState point = base.substream(t);
    std::vector<double> values(reps);
    parallel_for(reps, threads, [&](std::size_t r) {
      RngState local = point.substream(r);
      Matrix x(n, d), y(n, d);
      local.fill_gaussian(x.data());
      local.fill_gaussian(y.data());
      for (std::size_t i = 0; i < n; ++i) y(i, 0) += offset;
      if (metric == CurveMetric::kid) {
        const std::size_t block = std::min<std::size_t>(100, n);
        const std::size_t inner = std::max<std::size_t>(1, n / block);
        values[r] = kid(x, y, block, inner, local).value;
      } else {
        values[r] = fid_estimate(x, y);
      }
    });
    std::optional<double> analytic;
    if (pair == DistPair::same)
      analytic = 0.0;
    else if (metric == CurveMetric::fid)
      analytic = offset * offset;
    report.rows.push_back(
        detail::summarize("n=" + std::to_string(n), static_cast<double>(n), values, analytic));
  }
  rng = base.substream(n_list.size());
  return report;
}

// One-dimensional FID ordering reversal: P1 = N(0, (1 - 1/m)^2), P2 = Q =
// N(0, 1), exact reference moments on the Q side. True FIDs are 1/m^2 and 0,
// yet the expected plug-in estimates order the other way; Monte-Carlo means
// are reported next to the exact expectations.
inline BiasReport fid_ordering_reversal_1d(std::size_t m, std::size_t reps, RngState& rng,
                                           unsigned threads = 1) {
  if (m < 2) fail(ErrorCode::invalid_input, "fid_ordering_reversal_1d: m >= 2");
  if (reps < 2) fail(ErrorCode::invalid_input, "fid_ordering_reversal_1d: reps >= 2");
  const double sigma1 = 1.0 - 1.0 / static_cast<double>(m);

  std::vector<double> f1(reps), f2(reps);
  const RngState base = rng;
  parallel_for(reps, threads, [&](std::size_t r) {
    RngState local = base.substream(r);
    const auto plugin_fid_vs_std_normal = [&](double sigma) {
      RunningMeanVar acc;
      for (std::size_t i = 0; i < m; ++i) acc.add(sigma * local.gaussian());
      const double sd = acc.std_sample();
      return acc.mean() * acc.mean() + (sd - 1.0) * (sd - 1.0);
    };
    f1[r] = plugin_fid_vs_std_normal(sigma1);
    f2[r] = plugin_fid_vs_std_normal(1.0);
  });
  rng = base.substream(reps);

  const double e1 = expected_fid_1d_normal(0.0, sigma1, 0.0, 1.0, static_cast<std::int64_t>(m),
                                           infinite_samples);
  const double e2 = expected_fid_1d_normal(0.0, 1.0, 0.0, 1.0, static_cast<std::int64_t>(m),
                                           infinite_samples);
  std::vector<double> diff(reps);
  for (std::size_t r = 0; r < reps; ++r) diff[r] = f1[r] - f2[r];

  BiasReport report;
  report.experiment = "fid-reversal-1d";
  const double md = static_cast<double>(m);
  report.params = {{"m", md},
                   {"reps", static_cast<double>(reps)},
                   {"true_fid_p1", 1.0 / (md * md)},
                   {"true_fid_p2", 0.0}};
  report.rows.push_back(detail::summarize("P1", md, f1, e1));
  report.rows.push_back(detail::summarize("P2", md, f2, e2));
  report.rows.push_back(detail::summarize("diff", md, diff, e1 - e2));
  return report;
}

namespace detail {

inline Matrix sample_censored_normal(const std::vector<double>& mu, const SymMatrix& factor,
                                     std::size_t rows, RngState& rng) {
  const std::size_t d = mu.size();
  Matrix out(rows, d);
  std::vector<double> z(d);
  for (std::size_t r = 0; r < rows; ++r) {
    rng.fill_gaussian(z);
    for (std::size_t i = 0; i < d; ++i) {
      double v = mu[i];
      for (std::size_t k = 0; k < d; ++k) v += factor(i, k) * z[k];
      out(r, i) = v > 0.0 ? v : 0.0;
    }
  }
  return out;
}

}  // namespace detail

// High-dimensional censored-normal FID comparison: with a seeded random
// covariance, P1 = relu(N(0, I)), P2 = relu(N(1, 0.8 S + 0.2 I)),
// Q = relu(N(1, I)). Ground-truth moments (Monte-Carlo off-diagonals) give the
// true FIDs; plug-in estimates at sample size m are reported next to them.
// Whether the ordering reverses depends on the covariance draw, so the report
// states it without asserting it.
inline BiasReport fid_ordering_reversal_relu(std::size_t d, std::size_t m, RngState& rng,
                                             std::size_t mc_samples = 200000,
                                             std::size_t est_reps = 3, unsigned threads = 1) {
  if (d < 2 || m < 2) fail(ErrorCode::invalid_input, "fid_ordering_reversal_relu: d, m >= 2");
  if (est_reps < 2) fail(ErrorCode::invalid_input, "fid_ordering_reversal_relu: est_reps >= 2");
  const RngState base = rng;

  RngState c_rng = base.substream(0);
  Matrix c(d, d);
  c_rng.fill_gaussian(c.data());
  SymMatrix blend(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += c(i, k) * c(j, k);
      s *= 4.0 / static_cast<double>(d);
      blend.set(i, j, 0.8 * s + (i == j ? 0.2 : 0.0));
    }

  const std::vector<double> mu0(d, 0.0), mu1(d, 1.0);
  const SymMatrix identity = SymMatrix::identity(d);

  RngState gt_rng = base.substream(1);
  const CensoredMomentsResult p1 = censored_normal_moments(mu0, identity, gt_rng, mc_samples, threads);
  const CensoredMomentsResult p2 = censored_normal_moments(mu1, blend, gt_rng, mc_samples, threads);
  const CensoredMomentsResult q = censored_normal_moments(mu1, identity, gt_rng, mc_samples, threads);

  const double true_f1 = frechet_distance(p1.moments, q.moments);
  const double true_f2 = frechet_distance(p2.moments, q.moments);

  const SymMatrix factor_i = psd_sqrt(identity);
  const SymMatrix factor_b = psd_sqrt(blend);
  std::vector<double> est1(est_reps), est2(est_reps);
  RngState est_rng = base.substream(2);
  for (std::size_t r = 0; r < est_reps; ++r) {
    const Matrix s1 = detail::sample_censored_normal(mu0, factor_i, m, est_rng);
    const Matrix s2 = detail::sample_censored_normal(mu1, factor_b, m, est_rng);
    est1[r] = frechet_distance(fit_moments(s1), q.moments);
    est2[r] = frechet_distance(fit_moments(s2), q.moments);
  }
  rng = base.substream(3);

  BiasReport report;
  report.experiment = "fid-reversal-relu";
  report.params = {{"d", static_cast<double>(d)},
                   {"m", static_cast<double>(m)},
                   {"mc_samples", static_cast<double>(mc_samples)},
                   {"est_reps", static_cast<double>(est_reps)},
                   {"true_fid_p1q", true_f1},
                   {"true_fid_p2q", true_f2},
                   {"max_offdiag_stderr", std::max({p1.max_offdiag_stderr,
                                                    p2.max_offdiag_stderr,
                                                    q.max_offdiag_stderr})}};
  report.rows.push_back(detail::summarize("P1", static_cast<double>(m), est1, true_f1));
  report.rows.push_back(detail::summarize("P2", static_cast<double>(m), est2, true_f2));
  return report;
}

}  // namespace kmet
