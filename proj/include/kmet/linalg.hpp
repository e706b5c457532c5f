#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "kmet/error.hpp"
#include "kmet/matrix.hpp"

namespace kmet {

struct EigResult {
  std::vector<double> eigenvalues;  // descending
  Matrix eigenvectors;              // column k pairs with eigenvalues[k]
};

namespace detail {

inline double offdiag_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) s += a(i, j) * a(i, j);
  return std::sqrt(2.0 * s);
}

}  // namespace detail

// Symmetric eigendecomposition by cyclic Jacobi rotations. Adequate for the
// moderate dimensions used here (d <= 2048) and fully deterministic.
inline EigResult sym_eig(const SymMatrix& input, int max_sweeps = 100) {
  if (!input.all_finite()) fail(ErrorCode::invalid_input, "sym_eig: non-finite entries");
  const std::size_t n = input.dim();
  Matrix a = input.to_matrix();
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double fro = 0.0;
  for (double x : a.data()) fro += x * x;
  fro = std::sqrt(fro);
  const double tol = 1e-14 * fro;

  bool converged = fro == 0.0 || n < 2;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    if (detail::offdiag_norm(a) <= tol) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const double app = a(p, p), aqq = a(q, q);
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const double arp = a(r, p), arq = a(r, q);
            a(r, p) = c * arp - s * arq;
            a(p, r) = a(r, p);
            a(r, q) = s * arp + c * arq;
            a(q, r) = a(r, q);
          }
          const double vrp = v(r, p), vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
    if (detail::offdiag_norm(a) <= tol) converged = true;
  }
  if (!converged)
    fail(ErrorCode::eig_no_convergence, "sym_eig: Jacobi sweep cap reached without convergence");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigResult out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, k) = v(r, order[k]);
  }
  return out;
}

// Symmetric PSD square root: S with S*S ~= A. Eigenvalues within
// -1e-10*||A||_F of zero are clamped to zero; anything below that is an error.
inline SymMatrix psd_sqrt(const SymMatrix& a) {
  const double tol = 1e-10 * a.frobenius_norm();
  EigResult eig = sym_eig(a);
  const std::size_t n = a.dim();
  std::vector<double> sq(n);
  for (std::size_t k = 0; k < n; ++k) {
    double lam = eig.eigenvalues[k];
    if (lam < -tol) fail(ErrorCode::not_psd, "psd_sqrt: eigenvalue below PSD tolerance");
    if (lam < 0.0) lam = 0.0;
    sq[k] = std::sqrt(lam);
  }
  SymMatrix s(n);
  const Matrix& v = eig.eigenvectors;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += v(i, k) * sq[k] * v(j, k);
      s.set(i, j, acc);
    }
  return s;
}

// C = A * B for plain dense matrices.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) fail(ErrorCode::dimension_mismatch, "matmul: inner dims differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

}  // namespace kmet
