#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kmet/error.hpp"
#include "kmet/matrix.hpp"

namespace kmet {

// Kernel families. Mixture kernels are sums (not averages) over the listed
// parameters. All families are symmetric in their two arguments.
struct RbfMixture {
  std::vector<double> sigmas;  // k(x,y) = sum_s exp(-||x-y||^2 / (2 s^2))
};

struct RqMixture {
  std::vector<double> alphas;  // k(x,y) = sum_a (1 + ||x-y||^2 / (2a))^-a
};

struct DotKernel {};  // k(x,y) = <x, y>

struct RqDot {
  std::vector<double> alphas;  // RqMixture + DotKernel
};

struct DistanceKernel {
  double beta = 1.0;       // rho(x,y) = ||x-y||^beta, beta in (0, 2]
  std::vector<double> z0;  // empty means the origin
};

struct PolyKernel {
  int degree = 3;
  double gamma = 1.0;
  double coef = 1.0;  // k(x,y) = (gamma <x,y> + coef)^degree
};

using KernelSpec =
    std::variant<RbfMixture, RqMixture, DotKernel, RqDot, DistanceKernel, PolyKernel>;

inline const std::vector<double>& default_sigmas() {
  static const std::vector<double> v{2, 5, 10, 20, 40, 80};
  return v;
}

inline const std::vector<double>& default_alphas() {
  static const std::vector<double> v{0.2, 0.5, 1, 2, 5};
  return v;
}

// The KID kernel: cubic polynomial with gamma = 1/d, coef = 1.
inline PolyKernel kid_kernel(std::size_t d) {
  return PolyKernel{3, 1.0 / static_cast<double>(d), 1.0};
}

inline void validate_kernel(const KernelSpec& spec) {
  std::visit(
      [](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, RbfMixture>) {
          if (k.sigmas.empty()) fail(ErrorCode::invalid_input, "rbf: empty sigma list");
          for (double s : k.sigmas)
            if (!(s > 0)) fail(ErrorCode::invalid_input, "rbf: sigma must be positive");
        } else if constexpr (std::is_same_v<K, RqMixture> || std::is_same_v<K, RqDot>) {
          if (k.alphas.empty()) fail(ErrorCode::invalid_input, "rq: empty alpha list");
          for (double a : k.alphas)
            if (!(a > 0)) fail(ErrorCode::invalid_input, "rq: alpha must be positive");
        } else if constexpr (std::is_same_v<K, DistanceKernel>) {
          if (!(k.beta > 0 && k.beta <= 2))
            fail(ErrorCode::invalid_input, "dist: beta must lie in (0, 2]");
        } else if constexpr (std::is_same_v<K, PolyKernel>) {
          if (k.degree < 1) fail(ErrorCode::invalid_input, "poly: degree must be >= 1");
          if (!(k.gamma > 0)) fail(ErrorCode::invalid_input, "poly: gamma must be positive");
          if (!std::isfinite(k.coef)) fail(ErrorCode::invalid_input, "poly: coef not finite");
        }
      },
      spec);
}

namespace detail {

inline double pow_int(double b, int e) {
  double r = 1.0;
  while (e > 0) {
    if (e & 1) r *= b;
    b *= b;
    e >>= 1;
  }
  return r;
}

// base^(-expo) for expo > 0, with cheap paths for integer and half-integer
// exponents (covers the standard alpha lists without calling pow).
inline double pow_neg(double base, double expo) {
  const double r = std::round(expo);
  if (r == expo && r <= 32.0) return 1.0 / pow_int(base, static_cast<int>(r));
  const double r2 = std::round(2.0 * expo);
  if (r2 == 2.0 * expo && r2 <= 63.0)
    return 1.0 / (pow_int(base, static_cast<int>(r2) / 2) * std::sqrt(base));
  return std::pow(base, -expo);
}

inline std::vector<double> row_sqnorms(const Matrix& x) {
  std::vector<double> n(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* p = x.row_ptr(i);
    double s = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) s += p[k] * p[k];
    n[i] = s;
  }
  return n;
}

inline double dot_raw(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

// Expanded-form squared distance, clamped at zero.
inline double sqdist_from(double nx, double ny, double xy) {
  const double s = nx + ny - 2.0 * xy;
  return s > 0.0 ? s : 0.0;
}

template <typename K>
struct PairEval;

template <>
struct PairEval<RbfMixture> {
  const RbfMixture& k;
  const Matrix& x;
  const Matrix& y;
  std::vector<double> nx, ny;

  PairEval(const RbfMixture& k_, const Matrix& x_, const Matrix& y_)
      : k(k_), x(x_), y(y_), nx(row_sqnorms(x_)), ny(row_sqnorms(y_)) {}

  double value(std::size_t i, std::size_t j) const {
    const double sq =
        sqdist_from(nx[i], ny[j], dot_raw(x.row_ptr(i), y.row_ptr(j), x.cols()));
    double v = 0.0;
    for (double s : k.sigmas) v += std::exp(-sq / (2.0 * s * s));
    return v;
  }

  void add_grad(std::size_t i, std::size_t j, double w, double* gx, double* gy) const {
    const std::size_t d = x.cols();
    const double* xi = x.row_ptr(i);
    const double* yj = y.row_ptr(j);
    const double sq = sqdist_from(nx[i], ny[j], dot_raw(xi, yj, d));
    double dk_dsq = 0.0;
    for (double s : k.sigmas) {
      const double inv2s2 = 1.0 / (2.0 * s * s);
      dk_dsq -= inv2s2 * std::exp(-sq * inv2s2);
    }
    const double c = 2.0 * w * dk_dsq;
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = c * (xi[t] - yj[t]);
      gx[t] += diff;
      gy[t] -= diff;
    }
  }
};

template <>
struct PairEval<RqMixture> {
  const RqMixture& k;
  const Matrix& x;
  const Matrix& y;
  std::vector<double> nx, ny;

  PairEval(const RqMixture& k_, const Matrix& x_, const Matrix& y_)
      : k(k_), x(x_), y(y_), nx(row_sqnorms(x_)), ny(row_sqnorms(y_)) {}

  static double component(double sq, double a) { return pow_neg(1.0 + sq / (2.0 * a), a); }

  double value(std::size_t i, std::size_t j) const {
    const double sq =
        sqdist_from(nx[i], ny[j], dot_raw(x.row_ptr(i), y.row_ptr(j), x.cols()));
    double v = 0.0;
    for (double a : k.alphas) v += component(sq, a);
    return v;
  }

  void add_grad(std::size_t i, std::size_t j, double w, double* gx, double* gy) const {
    const std::size_t d = x.cols();
    const double* xi = x.row_ptr(i);
    const double* yj = y.row_ptr(j);
    const double sq = sqdist_from(nx[i], ny[j], dot_raw(xi, yj, d));
    double dk_dsq = 0.0;
    for (double a : k.alphas) dk_dsq -= 0.5 * pow_neg(1.0 + sq / (2.0 * a), a + 1.0);
    const double c = 2.0 * w * dk_dsq;
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = c * (xi[t] - yj[t]);
      gx[t] += diff;
      gy[t] -= diff;
    }
  }
};

template <>
struct PairEval<DotKernel> {
  const Matrix& x;
  const Matrix& y;

  PairEval(const DotKernel&, const Matrix& x_, const Matrix& y_) : x(x_), y(y_) {}

  double value(std::size_t i, std::size_t j) const {
    return dot_raw(x.row_ptr(i), y.row_ptr(j), x.cols());
  }

  void add_grad(std::size_t i, std::size_t j, double w, double* gx, double* gy) const {
    const std::size_t d = x.cols();
    const double* xi = x.row_ptr(i);
    const double* yj = y.row_ptr(j);
    for (std::size_t t = 0; t < d; ++t) {
      gx[t] += w * yj[t];
      gy[t] += w * xi[t];
    }
  }
};

template <>
struct PairEval<RqDot> {
  RqMixture rq;
  PairEval<RqMixture> rq_eval;

  PairEval(const RqDot& k_, const Matrix& x_, const Matrix& y_)
      : rq{k_.alphas}, rq_eval(rq, x_, y_) {}

  double value(std::size_t i, std::size_t j) const {
    // Sum the RQ components first, then add the linear term, so the value is
    // bit-identical to RqMixture + DotKernel evaluated separately.
    return rq_eval.value(i, j) +
           dot_raw(rq_eval.x.row_ptr(i), rq_eval.y.row_ptr(j), rq_eval.x.cols());
  }

  void add_grad(std::size_t i, std::size_t j, double w, double* gx, double* gy) const {
    rq_eval.add_grad(i, j, w, gx, gy);
    const std::size_t d = rq_eval.x.cols();
    const double* xi = rq_eval.x.row_ptr(i);
    const double* yj = rq_eval.y.row_ptr(j);
    for (std::size_t t = 0; t < d; ++t) {
      gx[t] += w * yj[t];
      gy[t] += w * xi[t];
    }
  }
};

template <>
struct PairEval<DistanceKernel> {
  const DistanceKernel& k;
  const Matrix& x;
  const Matrix& y;
  std::vector<double> sq_x0, sq_y0;  // squared distances to z0
  std::vector<double> nx, ny;
  double z0_sq = 0.0;

  PairEval(const DistanceKernel& k_, const Matrix& x_, const Matrix& y_)
      : k(k_), x(x_), y(y_), nx(row_sqnorms(x_)), ny(row_sqnorms(y_)) {
    if (!k.z0.empty() && k.z0.size() != x.cols())
      fail(ErrorCode::dimension_mismatch, "dist kernel: z0 dimension mismatch");
    sq_x0 = to_z0(x, nx);
    sq_y0 = to_z0(y, ny);
  }

  std::vector<double> to_z0(const Matrix& m, const std::vector<double>& n2) {
    std::vector<double> out(m.rows());
    if (k.z0.empty()) {
      out = n2;
      return out;
    }
    double z2 = 0.0;
    for (double v : k.z0) z2 += v * v;
    z0_sq = z2;
    for (std::size_t i = 0; i < m.rows(); ++i)
      out[i] = sqdist_from(n2[i], z2, dot_raw(m.row_ptr(i), k.z0.data(), m.cols()));
    return out;
  }

  double rho(double sq) const {
    if (k.beta == 2.0) return sq;
    if (k.beta == 1.0) return std::sqrt(sq);
    return std::pow(sq, 0.5 * k.beta);
  }

  double value(std::size_t i, std::size_t j) const {
    const double sq =
        sqdist_from(nx[i], ny[j], dot_raw(x.row_ptr(i), y.row_ptr(j), x.cols()));
    return 0.5 * (rho(sq_x0[i]) + rho(sq_y0[j]) - rho(sq));
  }

  // d rho / d (point) = beta * sq^((beta-2)/2) * (point - other); returns the
  // scalar factor, handling the non-differentiable origin.
  double rho_grad_coef(double sq) const {
    if (k.beta == 2.0) return 2.0;
    if (sq == 0.0) {
      if (k.beta > 1.0) return 0.0;  // true limit
      fail(ErrorCode::non_differentiable_point,
           "dist kernel: gradient undefined at coincident points for beta <= 1");
    }
    if (k.beta == 1.0) return 1.0 / std::sqrt(sq);
    return k.beta * std::pow(sq, 0.5 * k.beta - 1.0);
  }

  void add_grad(std::size_t i, std::size_t j, double w, double* gx, double* gy) const {
    const std::size_t d = x.cols();
    const double* xi = x.row_ptr(i);
    const double* yj = y.row_ptr(j);
    const double sq = sqdist_from(nx[i], ny[j], dot_raw(xi, yj, d));
    if (sq == 0.0 && k.beta < 2.0)
      fail(ErrorCode::non_differentiable_point,
           "dist kernel: gradient undefined at x == y for beta < 2");
    const double cxy = rho_grad_coef(sq);
    const double cx0 = rho_grad_coef(sq_x0[i]);
    const double cy0 = rho_grad_coef(sq_y0[j]);
    for (std::size_t t = 0; t < d; ++t) {
      const double z0t = k.z0.empty() ? 0.0 : k.z0[t];
      const double diff = xi[t] - yj[t];
      gx[t] += 0.5 * w * (cx0 * (xi[t] - z0t) - cxy * diff);
      gy[t] += 0.5 * w * (cy0 * (yj[t] - z0t) + cxy * diff);
    }
  }
};

template <>
struct PairEval<PolyKernel> {
  const PolyKernel& k;
  const Matrix& x;
  const Matrix& y;

  PairEval(const PolyKernel& k_, const Matrix& x_, const Matrix& y_) : k(k_), x(x_), y(y_) {}

  double value(std::size_t i, std::size_t j) const {
    const double u = k.gamma * dot_raw(x.row_ptr(i), y.row_ptr(j), x.cols()) + k.coef;
    return pow_int(u, k.degree);
  }

  void add_grad(std::size_t i, std::size_t j, double w, double* gx, double* gy) const {
    const std::size_t d = x.cols();
    const double* xi = x.row_ptr(i);
    const double* yj = y.row_ptr(j);
    const double u = k.gamma * dot_raw(xi, yj, d) + k.coef;
    const double c = w * static_cast<double>(k.degree) * k.gamma * pow_int(u, k.degree - 1);
    for (std::size_t t = 0; t < d; ++t) {
      gx[t] += c * yj[t];
      gy[t] += c * xi[t];
    }
  }
};

template <typename F>
decltype(auto) visit_pair_eval(const KernelSpec& spec, const Matrix& x, const Matrix& y,
                               F&& f) {
  validate_kernel(spec);
  require_same_cols(x, y, "kernel");
  return std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        return f(PairEval<K>(k, x, y));
      },
      spec);
}

}  // namespace detail

inline double kernel_value(const KernelSpec& spec, std::span<const double> x,
                           std::span<const double> y) {
  if (x.size() != y.size() || x.empty())
    fail(ErrorCode::dimension_mismatch, "kernel_value: dimension mismatch");
  Matrix mx(1, x.size()), my(1, y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx(0, i) = x[i];
    my(0, i) = y[i];
  }
  return detail::visit_pair_eval(spec, mx, my, [](const auto& ev) { return ev.value(0, 0); });
}

struct KernelGrad {
  std::vector<double> grad_x, grad_y;
};

inline KernelGrad kernel_grad(const KernelSpec& spec, std::span<const double> x,
                              std::span<const double> y) {
  if (x.size() != y.size() || x.empty())
    fail(ErrorCode::dimension_mismatch, "kernel_grad: dimension mismatch");
  Matrix mx(1, x.size()), my(1, y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx(0, i) = x[i];
    my(0, i) = y[i];
  }
  KernelGrad g;
  g.grad_x.assign(x.size(), 0.0);
  g.grad_y.assign(y.size(), 0.0);
  detail::visit_pair_eval(spec, mx, my, [&](const auto& ev) {
    ev.add_grad(0, 0, 1.0, g.grad_x.data(), g.grad_y.data());
    return 0;
  });
  return g;
}

// Pairwise kernel matrix, entry (i, j) = k(x_i, y_j). Entries are filled in a
// fixed row-major order, independent of any parallelism.
inline Matrix kernel_matrix(const KernelSpec& spec, const Matrix& x, const Matrix& y) {
  Matrix out(x.rows(), y.rows());
  detail::visit_pair_eval(spec, x, y, [&](const auto& ev) {
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < y.rows(); ++j) out(i, j) = ev.value(i, j);
    return 0;
  });
  return out;
}

// --- CLI kernel grammar -----------------------------------------------------
//
//   rbf[:s1,s2,...]   rq[:a1,a2,...]   dot   rq-dot[:a1,...]
//   dist[:beta=B]     poly[:deg=N[,gamma=G][,coef=C]]
//
// Omitted mixture parameters fall back to the default sigma/alpha lists; an
// omitted poly gamma resolves to 1/d once the data dimension is known.

struct ParsedKernel {
  KernelSpec spec;
  bool poly_gamma_from_dim = false;
};

namespace detail {

inline std::vector<double> parse_list(const std::string& s, const char* who) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    const std::string tok = s.substr(pos, next - pos);
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_input, std::string(who) + ": bad number '" + tok + "'");
    }
    pos = next + 1;
  }
  if (out.empty()) fail(ErrorCode::invalid_input, std::string(who) + ": empty parameter list");
  return out;
}

inline std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& s,
                                                                 const char* who) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    const std::string tok = s.substr(pos, next - pos);
    const std::size_t eq = tok.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::invalid_input, std::string(who) + ": expected key=value, got '" + tok + "'");
    out.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    pos = next + 1;
  }
  return out;
}

inline double parse_double(const std::string& s, const char* who) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_input, std::string(who) + ": bad number '" + s + "'");
  }
}

}  // namespace detail

inline ParsedKernel parse_kernel(const std::string& text) {
  const std::size_t colon = text.find(':');
  const std::string name = text.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);

  ParsedKernel out;
  if (name == "rbf") {
    out.spec = RbfMixture{args.empty() ? default_sigmas() : detail::parse_list(args, "rbf")};
  } else if (name == "rq") {
    out.spec = RqMixture{args.empty() ? default_alphas() : detail::parse_list(args, "rq")};
  } else if (name == "dot") {
    if (!args.empty()) fail(ErrorCode::invalid_input, "dot kernel takes no parameters");
    out.spec = DotKernel{};
  } else if (name == "rq-dot") {
    out.spec = RqDot{args.empty() ? default_alphas() : detail::parse_list(args, "rq-dot")};
  } else if (name == "dist") {
    DistanceKernel k;
    for (const auto& [key, val] : detail::parse_kv(args, "dist")) {
      if (key == "beta")
        k.beta = detail::parse_double(val, "dist beta");
      else
        fail(ErrorCode::invalid_input, "dist: unknown parameter '" + key + "'");
    }
    out.spec = k;
  } else if (name == "poly") {
    PolyKernel k;
    bool have_gamma = false;
    for (const auto& [key, val] : detail::parse_kv(args, "poly")) {
      if (key == "deg")
        k.degree = static_cast<int>(detail::parse_double(val, "poly deg"));
      else if (key == "gamma") {
        k.gamma = detail::parse_double(val, "poly gamma");
        have_gamma = true;
      } else if (key == "coef")
        k.coef = detail::parse_double(val, "poly coef");
      else
        fail(ErrorCode::invalid_input, "poly: unknown parameter '" + key + "'");
    }
    out.poly_gamma_from_dim = !have_gamma;
    if (out.poly_gamma_from_dim) k.gamma = 1.0;  // placeholder until finalize
    out.spec = k;
  } else {
    fail(ErrorCode::invalid_input, "unknown kernel '" + name + "'");
  }
  validate_kernel(out.spec);
  return out;
}

// Resolves data-dependent defaults (poly gamma = 1/d) and validates.
inline KernelSpec finalize_kernel(ParsedKernel parsed, std::size_t d) {
  if (parsed.poly_gamma_from_dim)
    std::get<PolyKernel>(parsed.spec).gamma = 1.0 / static_cast<double>(d);
  validate_kernel(parsed.spec);
  return parsed.spec;
}

}  // namespace kmet
