#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kmet/error.hpp"
#include "kmet/kernels.hpp"
#include "kmet/matrix.hpp"
#include "kmet/parallel.hpp"
#include "kmet/rng.hpp"
#include "kmet/running_stats.hpp"

namespace kmet {

// A metric value with optional Monte-Carlo context. std_error is present iff
// the value is an average over reps >= 2 repetitions.
struct Estimate {
  double value = 0.0;
  std::optional<double> std_error;
  std::optional<std::size_t> block_size;
  std::optional<std::size_t> reps;
};

namespace detail {

// (1 / (n (n-1))) sum_{i != j} f(i, j), accumulated in row-major order with
// per-row partial sums.
template <typename F>
double mean_offdiag(std::size_t n, F&& f) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row += f(i, j);
    total += row;
  }
  return total / (static_cast<double>(n) * static_cast<double>(n - 1));
}

// (1 / (m n)) sum_{i, j} f(i, j).
template <typename F>
double mean_all(std::size_t m, std::size_t n, F&& f) {
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += f(i, j);
    total += row;
  }
  return total / (static_cast<double>(m) * static_cast<double>(n));
}

inline Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(idx[i], c);
  return out;
}

inline bool lex_less(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  return a.data() < b.data();
}

// Cross-term mean with a data-canonical accumulation order, so swapping the
// two samples reproduces the sum bit-for-bit (exchange symmetry is exact).
inline double mean_cross_canonical(const KernelSpec& spec, const Matrix& x, const Matrix& y) {
  const Matrix& first = lex_less(y, x) ? y : x;
  const Matrix& second = lex_less(y, x) ? x : y;
  return visit_pair_eval(spec, first, second, [&](const auto& ev) {
    return mean_all(first.rows(), second.rows(),
                    [&](std::size_t i, std::size_t j) { return ev.value(i, j); });
  });
}

}  // namespace detail

// Unbiased squared-MMD U-statistic. May legitimately be negative; values are
// never clamped.
inline Estimate mmd2_unbiased(const KernelSpec& spec, const Matrix& x, const Matrix& y) {
  require_samples(x, 2, "mmd2_unbiased: X");
  require_samples(y, 2, "mmd2_unbiased: Y");
  require_same_cols(x, y, "mmd2_unbiased");
  const std::size_t m = x.rows(), n = y.rows();
  const double xx = detail::visit_pair_eval(spec, x, x, [&](const auto& ev) {
    return detail::mean_offdiag(m, [&](std::size_t i, std::size_t j) { return ev.value(i, j); });
  });
  const double yy = detail::visit_pair_eval(spec, y, y, [&](const auto& ev) {
    return detail::mean_offdiag(n, [&](std::size_t i, std::size_t j) { return ev.value(i, j); });
  });
  const double xy = detail::mean_cross_canonical(spec, x, y);
  return Estimate{xx + yy - 2.0 * xy, std::nullopt, std::nullopt, std::nullopt};
}

// Biased V-statistic (all pairs, including i = j). Nonnegative for PSD kernels
// up to round-off.
inline Estimate mmd2_biased(const KernelSpec& spec, const Matrix& x, const Matrix& y) {
  require_samples(x, 1, "mmd2_biased: X");
  require_samples(y, 1, "mmd2_biased: Y");
  require_same_cols(x, y, "mmd2_biased");
  const std::size_t m = x.rows(), n = y.rows();
  const double xx = detail::visit_pair_eval(spec, x, x, [&](const auto& ev) {
    return detail::mean_all(m, m, [&](std::size_t i, std::size_t j) { return ev.value(i, j); });
  });
  const double yy = detail::visit_pair_eval(spec, y, y, [&](const auto& ev) {
    return detail::mean_all(n, n, [&](std::size_t i, std::size_t j) { return ev.value(i, j); });
  });
  const double xy = detail::mean_cross_canonical(spec, x, y);
  return Estimate{xx + yy - 2.0 * xy, std::nullopt, std::nullopt, std::nullopt};
}

// Mean of MMD_u^2 over `reps` subsamples of `block` rows drawn without
// replacement, independently from X and Y. Each repetition uses its own
// derived RNG stream, so results are identical under any thread count.
inline Estimate mmd2_block_average(const KernelSpec& spec, const Matrix& x, const Matrix& y,
                                   std::size_t block, std::size_t reps, RngState& rng,
                                   unsigned threads = 1) {
  require_samples(x, 2, "mmd2_block_average: X");
  require_samples(y, 2, "mmd2_block_average: Y");
  require_same_cols(x, y, "mmd2_block_average");
  const std::size_t cap = std::min(x.rows(), y.rows());
  if (block < 2 || block > cap)
    fail(ErrorCode::invalid_input, "mmd2_block_average: block size out of range");
  if (reps < 1) fail(ErrorCode::invalid_input, "mmd2_block_average: reps must be >= 1");

  std::vector<double> values(reps);
  const RngState base = rng;
  parallel_for(reps, threads, [&](std::size_t r) {
    RngState local = base.substream(r);
    // A full-size block is the sample itself; skipping the shuffle keeps the
    // degenerate case bit-identical to mmd2_unbiased.
    const Matrix bx = block == x.rows()
                          ? x
                          : detail::take_rows(x, sample_without_replacement(x.rows(), block, local));
    const Matrix by = block == y.rows()
                          ? y
                          : detail::take_rows(y, sample_without_replacement(y.rows(), block, local));
    values[r] = mmd2_unbiased(spec, bx, by).value;
  });
  rng = base.substream(reps);  // advance the caller's state past the reps

  RunningMeanVar acc;
  for (double v : values) acc.add(v);
  Estimate out;
  out.value = acc.mean();
  if (reps >= 2) out.std_error = acc.std_error();
  out.block_size = block;
  out.reps = reps;
  return out;
}

// Kernel Inception Distance: block-averaged MMD_u^2 under the cubic
// polynomial kernel (<x,y>/d + 1)^3. A requested block of 0 or anything past
// min(m, n) is clamped; callers can detect that via the returned block_size.
inline Estimate kid(const Matrix& x, const Matrix& y, std::size_t block, std::size_t reps,
                    RngState& rng, unsigned threads = 1) {
  require_samples(x, 2, "kid: X");
  require_samples(y, 2, "kid: Y");
  require_same_cols(x, y, "kid");
  const std::size_t cap = std::min(x.rows(), y.rows());
  if (block == 0 || block > cap) block = cap;
  const KernelSpec spec = kid_kernel(x.cols());
  return mmd2_block_average(spec, x, y, block, reps, rng, threads);
}

inline Estimate kid(const Matrix& x, const Matrix& y, RngState& rng, unsigned threads = 1) {
  return kid(x, y, 1000, 100, rng, threads);
}

// Unbiased plug-in estimate of the energy distance with rho(x,y) = ||x-y||^beta:
//   (1/(mn)) sum rho(x_i, y_j) - (1/2) U_X - (1/2) U_Y,
// where U is the off-diagonal within-sample mean. Computed directly from
// pairwise distances, independently of the distance-kernel MMD route.
inline Estimate energy_distance(const Matrix& x, const Matrix& y, double beta) {
  require_samples(x, 2, "energy_distance: X");
  require_samples(y, 2, "energy_distance: Y");
  require_same_cols(x, y, "energy_distance");
  if (!(beta > 0 && beta <= 2))
    fail(ErrorCode::invalid_input, "energy_distance: beta must lie in (0, 2]");
  const std::size_t m = x.rows(), n = y.rows(), d = x.cols();

  const auto nx = detail::row_sqnorms(x);
  const auto ny = detail::row_sqnorms(y);
  const auto rho = [beta](double sq) {
    if (beta == 2.0) return sq;
    if (beta == 1.0) return std::sqrt(sq);
    return std::pow(sq, 0.5 * beta);
  };
  const double ux = detail::mean_offdiag(m, [&](std::size_t i, std::size_t j) {
    return rho(detail::sqdist_from(nx[i], nx[j], detail::dot_raw(x.row_ptr(i), x.row_ptr(j), d)));
  });
  const double uy = detail::mean_offdiag(n, [&](std::size_t i, std::size_t j) {
    return rho(detail::sqdist_from(ny[i], ny[j], detail::dot_raw(y.row_ptr(i), y.row_ptr(j), d)));
  });
  const double cross = detail::mean_all(m, n, [&](std::size_t i, std::size_t j) {
    return rho(detail::sqdist_from(nx[i], ny[j], detail::dot_raw(x.row_ptr(i), y.row_ptr(j), d)));
  });
  return Estimate{cross - 0.5 * ux - 0.5 * uy, std::nullopt, std::nullopt, std::nullopt};
}

// Cramer-critic surrogate loss (Euclidean rho):
//   E rho(X, X') + E rho(Y, 0) - E rho(X, 0) - E rho(X, Y),
// with the unbiased i != j pairing for the within-X term. Not a divergence:
// it vanishes for some P != Q.
inline Estimate cramer_surrogate(const Matrix& x, const Matrix& y) {
  require_samples(x, 2, "cramer_surrogate: X");
  require_samples(y, 1, "cramer_surrogate: Y");
  require_same_cols(x, y, "cramer_surrogate");
  const std::size_t m = x.rows(), n = y.rows(), d = x.cols();
  const auto nx = detail::row_sqnorms(x);
  const auto ny = detail::row_sqnorms(y);

  const double ux = detail::mean_offdiag(m, [&](std::size_t i, std::size_t j) {
    return std::sqrt(
        detail::sqdist_from(nx[i], nx[j], detail::dot_raw(x.row_ptr(i), x.row_ptr(j), d)));
  });
  double y_norm = 0.0;
  for (std::size_t j = 0; j < n; ++j) y_norm += std::sqrt(ny[j]);
  y_norm /= static_cast<double>(n);
  double x_norm = 0.0;
  for (std::size_t i = 0; i < m; ++i) x_norm += std::sqrt(nx[i]);
  x_norm /= static_cast<double>(m);
  const double cross = detail::mean_all(m, n, [&](std::size_t i, std::size_t j) {
    return std::sqrt(
        detail::sqdist_from(nx[i], ny[j], detail::dot_raw(x.row_ptr(i), y.row_ptr(j), d)));
  });
  return Estimate{ux + y_norm - x_norm - cross, std::nullopt, std::nullopt, std::nullopt};
}

// Empirical witness of the squared MMD (proportionality constant fixed to 1):
// f(t) = (1/m) sum_i k(x_i, t) - (1/n) sum_j k(y_j, t), one value per row of T.
inline std::vector<double> witness_eval(const KernelSpec& spec, const Matrix& x,
                                        const Matrix& y, const Matrix& t) {
  require_samples(x, 1, "witness_eval: X");
  require_samples(y, 1, "witness_eval: Y");
  require_samples(t, 1, "witness_eval: T");
  require_same_cols(x, y, "witness_eval");
  require_same_cols(x, t, "witness_eval");
  std::vector<double> out(t.rows(), 0.0);
  detail::visit_pair_eval(spec, x, t, [&](const auto& ev) {
    for (std::size_t q = 0; q < t.rows(); ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) s += ev.value(i, q);
      out[q] = s / static_cast<double>(x.rows());
    }
    return 0;
  });
  detail::visit_pair_eval(spec, y, t, [&](const auto& ev) {
    for (std::size_t q = 0; q < t.rows(); ++q) {
      double s = 0.0;
      for (std::size_t j = 0; j < y.rows(); ++j) s += ev.value(j, q);
      out[q] -= s / static_cast<double>(y.rows());
    }
    return 0;
  });
  return out;
}

// Analytic witness gradient at the rows of T.
inline Matrix witness_grad(const KernelSpec& spec, const Matrix& x, const Matrix& y,
                           const Matrix& t) {
  Matrix out(t.rows(), t.cols());
  std::vector<double> scratch(t.cols());
  detail::visit_pair_eval(spec, x, t, [&](const auto& ev) {
    const double w = 1.0 / static_cast<double>(x.rows());
    for (std::size_t q = 0; q < t.rows(); ++q) {
      std::fill(scratch.begin(), scratch.end(), 0.0);
      for (std::size_t i = 0; i < x.rows(); ++i)
        ev.add_grad(i, q, w, scratch.data(), out.row_ptr(q));
    }
    return 0;
  });
  detail::visit_pair_eval(spec, y, t, [&](const auto& ev) {
    const double w = -1.0 / static_cast<double>(y.rows());
    for (std::size_t q = 0; q < t.rows(); ++q) {
      std::fill(scratch.begin(), scratch.end(), 0.0);
      for (std::size_t j = 0; j < y.rows(); ++j)
        ev.add_grad(j, q, w, scratch.data(), out.row_ptr(q));
    }
    return 0;
  });
  return out;
}

// WGAN-GP style penalty on the witness gradient: mean over random interpolates
// alpha x_i + (1 - alpha) y_j of (||grad f|| - 1)^2. For distance kernels an
// interpolate coinciding with a sample point is resampled a bounded number of
// times before giving up.
inline Estimate witness_grad_penalty(const KernelSpec& spec, const Matrix& x, const Matrix& y,
                                     RngState& rng, std::size_t n_interp) {
  require_samples(x, 1, "witness_grad_penalty: X");
  require_samples(y, 1, "witness_grad_penalty: Y");
  require_same_cols(x, y, "witness_grad_penalty");
  if (n_interp < 1) fail(ErrorCode::invalid_input, "witness_grad_penalty: n_interp >= 1");
  const std::size_t d = x.cols();
  constexpr int max_retries = 100;

  RunningMeanVar acc;
  Matrix t(1, d);
  for (std::size_t s = 0; s < n_interp; ++s) {
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt > max_retries)
        fail(ErrorCode::non_differentiable_point,
             "witness_grad_penalty: retries exhausted at non-differentiable interpolates");
      const std::size_t i = static_cast<std::size_t>(rng.uniform_below(x.rows()));
      const std::size_t j = static_cast<std::size_t>(rng.uniform_below(y.rows()));
      const double a = rng.uniform01();
      for (std::size_t c = 0; c < d; ++c) t(0, c) = a * x(i, c) + (1.0 - a) * y(j, c);
      try {
        const Matrix g = witness_grad(spec, x, y, t);
        double norm2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) norm2 += g(0, c) * g(0, c);
        const double dev = std::sqrt(norm2) - 1.0;
        acc.add(dev * dev);
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::non_differentiable_point) throw;
      }
    }
  }
  Estimate out;
  out.value = acc.mean();
  if (n_interp >= 2) out.std_error = acc.std_error();
  out.reps = n_interp;
  return out;
}

// Energy score of a forecast sample X at observation y:
//   S(P, y) = (1/2) U_X - (1/m) sum_i rho(x_i, y),
// with the unbiased i != j within-sample average.
inline double energy_score(const Matrix& x, std::span<const double> y, double beta) {
  require_samples(x, 2, "energy_score: X");
  if (y.size() != x.cols()) fail(ErrorCode::dimension_mismatch, "energy_score: y dimension");
  if (!(beta > 0 && beta <= 2))
    fail(ErrorCode::invalid_input, "energy_score: beta must lie in (0, 2]");
  const std::size_t m = x.rows(), d = x.cols();
  const auto nx = detail::row_sqnorms(x);
  const auto rho = [beta](double sq) {
    if (beta == 2.0) return sq;
    if (beta == 1.0) return std::sqrt(sq);
    return std::pow(sq, 0.5 * beta);
  };
  const double ux = detail::mean_offdiag(m, [&](std::size_t i, std::size_t j) {
    return rho(detail::sqdist_from(nx[i], nx[j], detail::dot_raw(x.row_ptr(i), x.row_ptr(j), d)));
  });
  double ny = 0.0;
  for (double v : y) ny += v * v;
  double cross = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    cross += rho(detail::sqdist_from(nx[i], ny, detail::dot_raw(x.row_ptr(i), y.data(), d)));
  cross /= static_cast<double>(m);
  return 0.5 * ux - cross;
}

// Score-based alternative to the Cramer surrogate (Euclidean rho):
//   -(1/2) E rho(X, X') + E rho(X, Y) - E rho(Y, 0).
inline double score_based_cramer_objective(const Matrix& x, const Matrix& y) {
  require_samples(x, 2, "score_based_cramer_objective: X");
  require_samples(y, 1, "score_based_cramer_objective: Y");
  require_same_cols(x, y, "score_based_cramer_objective");
  const std::size_t m = x.rows(), n = y.rows(), d = x.cols();
  const auto nx = detail::row_sqnorms(x);
  const auto ny = detail::row_sqnorms(y);
  const double ux = detail::mean_offdiag(m, [&](std::size_t i, std::size_t j) {
    return std::sqrt(
        detail::sqdist_from(nx[i], nx[j], detail::dot_raw(x.row_ptr(i), x.row_ptr(j), d)));
  });
  const double cross = detail::mean_all(m, n, [&](std::size_t i, std::size_t j) {
    return std::sqrt(
        detail::sqdist_from(nx[i], ny[j], detail::dot_raw(x.row_ptr(i), y.row_ptr(j), d)));
  });
  double y_norm = 0.0;
  for (std::size_t j = 0; j < n; ++j) y_norm += std::sqrt(ny[j]);
  y_norm /= static_cast<double>(n);
  return -0.5 * ux + cross - y_norm;
}

}  // namespace kmet
