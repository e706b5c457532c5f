#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "kmet/error.hpp"
#include "kmet/linalg.hpp"
#include "kmet/matrix.hpp"
#include "kmet/parallel.hpp"
#include "kmet/rng.hpp"
#include "kmet/special.hpp"

namespace kmet {

struct GaussianMoments {
  std::vector<double> mean;
  SymMatrix cov;
};

// Sample mean and unbiased covariance (divisor n - 1).
inline GaussianMoments fit_moments(const Matrix& x) {
  require_samples(x, 2, "fit_moments");
  const std::size_t n = x.rows(), d = x.cols();
  GaussianMoments out;
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out.mean[c] += x(i, c);
  for (double& v : out.mean) v /= static_cast<double>(n);

  out.cov = SymMatrix(d);
  std::vector<double> centered(d);
  Matrix acc(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) centered[c] = x(i, c) - out.mean[c];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) acc(a, b) += centered[a] * centered[b];
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b)
      out.cov.set(a, b, acc(a, b) / static_cast<double>(n - 1));
  return out;
}

namespace detail {

inline void require_psd_within_tol(const SymMatrix& cov, const char* who) {
  const double tol = 1e-10 * cov.frobenius_norm();
  const EigResult eig = sym_eig(cov);
  for (double lam : eig.eigenvalues)
    if (lam < -tol) fail(ErrorCode::not_psd, std::string(who) + ": covariance not PSD");
}

}  // namespace detail

// Frechet (Wasserstein-2) distance between Gaussians:
//   ||mu_a - mu_b||^2 + tr Sa + tr Sb - 2 tr((Sa Sb)^(1/2)).
// The trace term is evaluated through the symmetrized form
// tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)), which is equal and keeps every step a
// symmetric eigendecomposition. Round-off values in (-1e-8, 0) are reported
// as 0; `clamped`, when given, records that.
inline double frechet_distance(const GaussianMoments& a, const GaussianMoments& b,
                               bool* clamped = nullptr) {
  if (a.mean.size() != b.mean.size() || a.cov.dim() != b.cov.dim() ||
      a.mean.size() != a.cov.dim())
    fail(ErrorCode::dimension_mismatch, "frechet_distance: dimension mismatch");
  detail::require_psd_within_tol(a.cov, "frechet_distance: a");
  detail::require_psd_within_tol(b.cov, "frechet_distance: b");
  if (clamped) *clamped = false;

  const std::size_t d = a.mean.size();
  double mean_term = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = a.mean[c] - b.mean[c];
    mean_term += diff * diff;
  }
  const SymMatrix sa = psd_sqrt(a.cov);
  const Matrix inner = matmul(matmul(sa.to_matrix(), b.cov.to_matrix()), sa.to_matrix());
  // Symmetric in exact arithmetic; average away round-off.
  SymMatrix m(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j)
      m.set(i, j, i == j ? inner(i, i) : 0.5 * (inner(i, j) + inner(j, i)));
  const EigResult eig = sym_eig(m);
  double tr_sqrt = 0.0;
  for (double lam : eig.eigenvalues) tr_sqrt += std::sqrt(lam > 0.0 ? lam : 0.0);

  double value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  if (value < 0.0) {
    if (value < -1e-8)
      fail(ErrorCode::not_psd, "frechet_distance: negative beyond round-off tolerance");
    value = 0.0;
    if (clamped) *clamped = true;
  }
  return value;
}

// Plug-in FID: fit Gaussian moments to both samples, then Frechet distance.
inline double fid_estimate(const Matrix& x, const Matrix& y, bool* clamped = nullptr) {
  require_same_cols(x, y, "fid_estimate");
  return frechet_distance(fit_moments(x), fit_moments(y), clamped);
}

// Expectation factor of the sample standard deviation under normality:
//   d_m = sqrt(2) Gamma(m/2) / (sqrt(m-1) Gamma((m-1)/2)),   in (0, 1).
inline double d_m_coefficient(std::int64_t m) {
  if (m < 2) fail(ErrorCode::domain_error, "d_m_coefficient: m must be >= 2");
  const double md = static_cast<double>(m);
  return std::exp(0.5 * std::log(2.0) - 0.5 * std::log(md - 1.0) + log_gamma(0.5 * md) -
                  log_gamma(0.5 * (md - 1.0)));
}

// Sample count that may be infinite (std::nullopt): at infinity the finite-m
// correction factors (m+1)/m and d_m both become 1.
using SampleCount = std::optional<std::int64_t>;
inline constexpr SampleCount infinite_samples = std::nullopt;

// Exact expectation of the plug-in FID between one-dimensional normals
// N(mu_p, sigma_p^2), N(mu_q, sigma_q^2) with m and n samples:
//   (mu_p - mu_q)^2 + ((m+1)/m) sigma_p^2 + ((n+1)/n) sigma_q^2
//   - 2 d_m d_n sigma_p sigma_q.
inline double expected_fid_1d_normal(double mu_p, double sigma_p, double mu_q, double sigma_q,
                                     SampleCount m, SampleCount n) {
  if (!(sigma_p > 0) || !(sigma_q > 0))
    fail(ErrorCode::domain_error, "expected_fid_1d_normal: sigmas must be positive");
  const auto factor = [](SampleCount c) {
    if (!c) return 1.0;
    if (*c < 2) fail(ErrorCode::domain_error, "expected_fid_1d_normal: counts must be >= 2");
    return (static_cast<double>(*c) + 1.0) / static_cast<double>(*c);
  };
  const auto dm = [](SampleCount c) { return c ? d_m_coefficient(*c) : 1.0; };
  const double mean_diff = mu_p - mu_q;
  return mean_diff * mean_diff + factor(m) * sigma_p * sigma_p +
         factor(n) * sigma_q * sigma_q - 2.0 * dm(m) * dm(n) * sigma_p * sigma_q;
}

struct Moments1d {
  double mean = 0.0;
  double variance = 0.0;
};

// Mean and variance of relu(N(mu, sigma^2)):
//   E[X]   = mu Phi(mu/sigma) + sigma phi(mu/sigma)
//   E[X^2] = (mu^2 + sigma^2) Phi(mu/sigma) + mu sigma phi(mu/sigma)
inline Moments1d censored_normal_moments_1d(double mu, double sigma) {
  if (!(sigma > 0)) fail(ErrorCode::domain_error, "censored_normal_moments_1d: sigma > 0");
  const double z = mu / sigma;
  const double cdf = std_normal_cdf(z);
  const double pdf = std_normal_pdf(z);
  Moments1d out;
  out.mean = mu * cdf + sigma * pdf;
  const double second = (mu * mu + sigma * sigma) * cdf + mu * sigma * pdf;
  out.variance = second - out.mean * out.mean;
  return out;
}

struct CensoredMomentsResult {
  GaussianMoments moments;
  double max_offdiag_stderr = 0.0;  // largest MC standard error among covariances
};

// Moments of relu(N(mu, cov)). Means and diagonal variances use the 1-D
// closed forms; off-diagonal covariances come from seeded Monte Carlo with
// per-entry standard errors summarized by max_offdiag_stderr. Work is chunked
// over derived streams, so the result is independent of the thread count.
inline CensoredMomentsResult censored_normal_moments(const std::vector<double>& mu,
                                                     const SymMatrix& cov, RngState& rng,
                                                     std::size_t mc_samples,
                                                     unsigned threads = 1) {
  const std::size_t d = mu.size();
  if (cov.dim() != d) fail(ErrorCode::dimension_mismatch, "censored_normal_moments: dims");
  if (mc_samples < 2) fail(ErrorCode::invalid_input, "censored_normal_moments: mc_samples");
  const SymMatrix factor = psd_sqrt(cov);

  // Fixed chunk grid: the stream layout must not depend on the worker count.
  const std::size_t n_chunks = std::min<std::size_t>(64, mc_samples);
  const std::size_t per_chunk = (mc_samples + n_chunks - 1) / n_chunks;

  struct ChunkAcc {
    std::vector<double> sum, sum_prod, sum_prod2;
    std::size_t count = 0;
  };
  std::vector<ChunkAcc> chunks(n_chunks);
  const std::size_t n_pairs = d * (d + 1) / 2;
  const RngState base = rng;

  parallel_for(n_chunks, threads, [&](std::size_t c) {
    ChunkAcc& acc = chunks[c];
    acc.sum.assign(d, 0.0);
    acc.sum_prod.assign(n_pairs, 0.0);
    acc.sum_prod2.assign(n_pairs, 0.0);
    RngState local = base.substream(c);
    const std::size_t lo = c * per_chunk;
    const std::size_t hi = std::min(mc_samples, lo + per_chunk);
    std::vector<double> z(d), u(d);
    for (std::size_t s = lo; s < hi; ++s) {
      local.fill_gaussian(z);
      for (std::size_t i = 0; i < d; ++i) {
        double v = mu[i];
        for (std::size_t k = 0; k < d; ++k) v += factor(i, k) * z[k];
        u[i] = v > 0.0 ? v : 0.0;
      }
      std::size_t p = 0;
      for (std::size_t i = 0; i < d; ++i) {
        acc.sum[i] += u[i];
        for (std::size_t j = i; j < d; ++j, ++p) {
          const double prod = u[i] * u[j];
          acc.sum_prod[p] += prod;
          acc.sum_prod2[p] += prod * prod;
        }
      }
      ++acc.count;
    }
  });
  rng = base.substream(n_chunks);

  std::vector<double> sum(d, 0.0), sum_prod(n_pairs, 0.0), sum_prod2(n_pairs, 0.0);
  std::size_t total = 0;
  for (const ChunkAcc& acc : chunks) {
    if (acc.count == 0) continue;
    for (std::size_t i = 0; i < d; ++i) sum[i] += acc.sum[i];
    for (std::size_t p = 0; p < n_pairs; ++p) {
      sum_prod[p] += acc.sum_prod[p];
      sum_prod2[p] += acc.sum_prod2[p];
    }
    total += acc.count;
  }
  const double n = static_cast<double>(total);

  CensoredMomentsResult out;
  out.moments.mean.resize(d);
  out.moments.cov = SymMatrix(d);
  std::vector<double> mc_mean(d);
  for (std::size_t i = 0; i < d; ++i) {
    mc_mean[i] = sum[i] / n;
    const Moments1d exact = censored_normal_moments_1d(mu[i], std::sqrt(cov(i, i)));
    out.moments.mean[i] = exact.mean;
    out.moments.cov.set(i, i, exact.variance);
  }
  std::size_t p = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j, ++p) {
      if (i == j) continue;
      const double mean_prod = sum_prod[p] / n;
      const double cov_ij = (sum_prod[p] - n * mc_mean[i] * mc_mean[j]) / (n - 1.0);
      out.moments.cov.set(i, j, cov_ij);
      const double var_prod = sum_prod2[p] / n - mean_prod * mean_prod;
      const double se = std::sqrt(var_prod > 0.0 ? var_prod / n : 0.0);
      if (se > out.max_offdiag_stderr) out.max_offdiag_stderr = se;
    }
  }
  return out;
}

// Inception score of an n x C matrix of class probabilities:
//   exp( mean_i KL(p_i || mean_i p_i) ),  with 0 log 0 = 0.  Lies in [1, C].
inline double inception_score(const Matrix& probs) {
  require_samples(probs, 1, "inception_score");
  const std::size_t n = probs.rows(), c = probs.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = probs(i, j);
      if (p < 0.0) fail(ErrorCode::invalid_input, "inception_score: negative probability");
      row_sum += p;
    }
    if (std::fabs(row_sum - 1.0) > 1e-8)
      fail(ErrorCode::invalid_input, "inception_score: row does not sum to 1");
  }
  std::vector<double> marginal(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) marginal[j] += probs(i, j);
  for (double& v : marginal) v /= static_cast<double>(n);

  double mean_kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double kl = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = probs(i, j);
      if (p > 0.0) kl += p * std::log(p / marginal[j]);
    }
    mean_kl += kl;
  }
  mean_kl /= static_cast<double>(n);
  return std::exp(mean_kl);
}

}  // namespace kmet
