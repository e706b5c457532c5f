#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "kmet/error.hpp"
#include "kmet/estimators.hpp"
#include "kmet/kernels.hpp"
#include "kmet/matrix.hpp"
#include "kmet/parallel.hpp"
#include "kmet/rng.hpp"

namespace kmet {

// Feedforward networks restricted to affine and ReLU layers.

struct AffineLayer {
  Matrix weight;             // out_dim x in_dim
  std::vector<double> bias;  // out_dim
};

struct ReluLayer {};

using Layer = std::variant<AffineLayer, ReluLayer>;

struct NetSpec {
  std::size_t input_dim = 0;
  std::vector<Layer> layers;

  std::size_t output_dim() const {
    std::size_t cur = input_dim;
    for (const Layer& l : layers)
      if (const auto* a = std::get_if<AffineLayer>(&l)) cur = a->weight.rows();
    return cur;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers)
      if (const auto* a = std::get_if<AffineLayer>(&l)) n += a->weight.size() + a->bias.size();
    return n;
  }

  void validate() const {
    if (input_dim == 0) fail(ErrorCode::invalid_input, "NetSpec: zero input dim");
    std::size_t cur = input_dim;
    for (const Layer& l : layers) {
      if (const auto* a = std::get_if<AffineLayer>(&l)) {
        if (a->weight.cols() != cur || a->weight.rows() != a->bias.size() ||
            a->weight.rows() == 0)
          fail(ErrorCode::dimension_mismatch, "NetSpec: incompatible affine layer");
        if (!a->weight.all_finite())
          fail(ErrorCode::invalid_input, "NetSpec: non-finite weights");
        for (double b : a->bias)
          if (!std::isfinite(b)) fail(ErrorCode::invalid_input, "NetSpec: non-finite bias");
        cur = a->weight.rows();
      }
    }
  }

  // Flattened parameters: per affine layer, weights row-major then biases.
  std::vector<double> pack() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const Layer& l : layers)
      if (const auto* a = std::get_if<AffineLayer>(&l)) {
        out.insert(out.end(), a->weight.data().begin(), a->weight.data().end());
        out.insert(out.end(), a->bias.begin(), a->bias.end());
      }
    return out;
  }

  void unpack(std::span<const double> params) {
    if (params.size() != param_count())
      fail(ErrorCode::invalid_input, "NetSpec::unpack: parameter count mismatch");
    std::size_t pos = 0;
    for (Layer& l : layers)
      if (auto* a = std::get_if<AffineLayer>(&l)) {
        std::copy_n(params.data() + pos, a->weight.size(), a->weight.data().data());
        pos += a->weight.size();
        std::copy_n(params.data() + pos, a->bias.size(), a->bias.data());
        pos += a->bias.size();
      }
  }
};

// Affine stacks with a ReLU between consecutive affine layers (none trailing).
// Weights ~ N(0, scale^2 / fan_in), biases ~ N(0, (scale/10)^2).
inline NetSpec make_mlp(std::size_t input_dim, const std::vector<std::size_t>& widths,
                        RngState& rng, double scale = 1.0) {
  if (widths.empty()) fail(ErrorCode::invalid_input, "make_mlp: needs at least one width");
  NetSpec net;
  net.input_dim = input_dim;
  std::size_t cur = input_dim;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    AffineLayer a;
    a.weight = Matrix(widths[k], cur);
    const double sd = scale / std::sqrt(static_cast<double>(cur));
    for (double& w : a.weight.data()) w = sd * rng.gaussian();
    a.bias.resize(widths[k]);
    for (double& b : a.bias) b = 0.1 * scale * rng.gaussian();
    net.layers.emplace_back(std::move(a));
    if (k + 1 < widths.size()) net.layers.emplace_back(ReluLayer{});
    cur = widths[k];
  }
  return net;
}

struct ForwardCache {
  std::vector<Matrix> acts;  // acts[0] = input, acts[k+1] = output of layer k
};

inline Matrix net_forward_cached(const NetSpec& net, const Matrix& x, ForwardCache* cache) {
  net.validate();
  if (x.cols() != net.input_dim)
    fail(ErrorCode::dimension_mismatch, "net_forward: input dimension mismatch");
  Matrix cur = x;
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(cur);
  }
  for (const Layer& l : net.layers) {
    if (const auto* a = std::get_if<AffineLayer>(&l)) {
      Matrix next(cur.rows(), a->weight.rows());
      for (std::size_t r = 0; r < cur.rows(); ++r)
        for (std::size_t o = 0; o < a->weight.rows(); ++o) {
          double v = a->bias[o];
          const double* w = a->weight.row_ptr(o);
          const double* in = cur.row_ptr(r);
          for (std::size_t i = 0; i < a->weight.cols(); ++i) v += w[i] * in[i];
          next(r, o) = v;
        }
      cur = std::move(next);
    } else {
      for (double& v : cur.data()) v = v > 0.0 ? v : 0.0;
    }
    if (cache) cache->acts.push_back(cur);
  }
  return cur;
}

inline Matrix net_forward(const NetSpec& net, const Matrix& x) {
  return net_forward_cached(net, x, nullptr);
}

// Reverse-mode pass. `upstream` holds dL/d(output) per row; parameter
// gradients accumulate into `param_grad` (pack() layout); dL/d(input) lands in
// *input_grad when requested. ReLU subgradient at exactly 0 is 0.
inline void net_backward(const NetSpec& net, const ForwardCache& cache, const Matrix& upstream,
                         std::span<double> param_grad, Matrix* input_grad) {
  if (param_grad.size() != net.param_count())
    fail(ErrorCode::invalid_input, "net_backward: gradient buffer size mismatch");
  std::vector<std::size_t> offsets(net.layers.size(), 0);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    offsets[k] = pos;
    if (const auto* a = std::get_if<AffineLayer>(&net.layers[k]))
      pos += a->weight.size() + a->bias.size();
  }

  Matrix grad = upstream;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    if (const auto* a = std::get_if<AffineLayer>(&net.layers[k])) {
      const Matrix& in = cache.acts[k];
      const std::size_t out_dim = a->weight.rows(), in_dim = a->weight.cols();
      double* wg = param_grad.data() + offsets[k];
      double* bg = wg + a->weight.size();
      Matrix next(grad.rows(), in_dim);
      for (std::size_t r = 0; r < grad.rows(); ++r) {
        const double* g = grad.row_ptr(r);
        const double* inp = in.row_ptr(r);
        double* nx = next.row_ptr(r);
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double go = g[o];
          if (go != 0.0) {
            double* wrow = wg + o * in_dim;
            const double* w = a->weight.row_ptr(o);
            for (std::size_t i = 0; i < in_dim; ++i) {
              wrow[i] += go * inp[i];
              nx[i] += go * w[i];
            }
          }
          bg[o] += go;
        }
      }
      grad = std::move(next);
    } else {
      const Matrix& out = cache.acts[k + 1];
      for (std::size_t r = 0; r < grad.rows(); ++r)
        for (std::size_t c = 0; c < grad.cols(); ++c)
          if (!(out(r, c) > 0.0)) grad(r, c) = 0.0;
    }
  }
  if (input_grad) *input_grad = std::move(grad);
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // critic parameters first, then generator's
  std::size_t critic_param_count = 0;
};

// Loss MMD_u^2(h(X), h(G(Z))) -- or MMD_u^2(h(X), h(Z)) without a generator --
// and its gradient over all critic (then generator) parameters by reverse-mode
// accumulation through the kernel and the layers.
inline LossGrad mmd_loss_grad(const NetSpec& critic, const NetSpec* generator,
                              const KernelSpec& spec, const Matrix& x, const Matrix& z) {
  critic.validate();
  if (generator) {
    generator->validate();
    if (generator->output_dim() != critic.input_dim)
      fail(ErrorCode::dimension_mismatch, "mmd_loss_grad: generator/critic dims");
  }
  require_samples(x, 2, "mmd_loss_grad: X");
  require_samples(z, 2, "mmd_loss_grad: Z");

  ForwardCache cx, cg, cz;
  const Matrix fx = net_forward_cached(critic, x, &cx);
  Matrix gz_in = z;
  if (generator) gz_in = net_forward_cached(*generator, z, &cg);
  const Matrix fz = net_forward_cached(critic, gz_in, &cz);

  const std::size_t m = fx.rows(), n = fz.rows();
  Matrix dfx(m, fx.cols()), dfz(n, fz.cols());

  double loss = 0.0;
  {
    const double wxx = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
    const double wzz = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    const double wxz = -2.0 / (static_cast<double>(m) * static_cast<double>(n));
    const double xx = detail::visit_pair_eval(spec, fx, fx, [&](const auto& ev) {
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          if (j == i) continue;
          row += ev.value(i, j);
          ev.add_grad(i, j, wxx, dfx.row_ptr(i), dfx.row_ptr(j));
        }
        total += row;
      }
      return total * wxx;
    });
    const double zz = detail::visit_pair_eval(spec, fz, fz, [&](const auto& ev) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          row += ev.value(i, j);
          ev.add_grad(i, j, wzz, dfz.row_ptr(i), dfz.row_ptr(j));
        }
        total += row;
      }
      return total * wzz;
    });
    const double xz = detail::visit_pair_eval(spec, fx, fz, [&](const auto& ev) {
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row += ev.value(i, j);
          ev.add_grad(i, j, wxz, dfx.row_ptr(i), dfz.row_ptr(j));
        }
        total += row;
      }
      return total;
    });
    loss = xx + zz + xz * wxz;
  }

  LossGrad out;
  out.critic_param_count = critic.param_count();
  const std::size_t gen_params = generator ? generator->param_count() : 0;
  out.grad.assign(out.critic_param_count + gen_params, 0.0);
  std::span<double> critic_slice(out.grad.data(), out.critic_param_count);

  net_backward(critic, cx, dfx, critic_slice, nullptr);
  Matrix dgz;
  net_backward(critic, cz, dfz, critic_slice, generator ? &dgz : nullptr);
  if (generator) {
    std::span<double> gen_slice(out.grad.data() + out.critic_param_count, gen_params);
    net_backward(*generator, cg, dgz, gen_slice, nullptr);
  }
  out.loss = loss;
  return out;
}

// Forward-only loss used by the finite-difference oracle path.
inline double mmd_loss_only(const NetSpec& critic, const NetSpec* generator,
                            const KernelSpec& spec, const Matrix& x, const Matrix& z) {
  const Matrix fx = net_forward(critic, x);
  const Matrix fz = net_forward(critic, generator ? net_forward(*generator, z) : z);
  return mmd2_unbiased(spec, fx, fz).value;
}

struct GradReport {
  std::vector<double> analytic;    // reference: analytic gradient, or the large-sample proxy
  std::vector<double> comparison;  // central differences, or the minibatch mean
  std::vector<double> std_err;     // per-coordinate MC standard errors (MC check only)
  double max_rel_error = 0.0;
  double cosine = 0.0;
  std::optional<double> frac_within_3stderr;
};

namespace detail {

// Per-coordinate relative error, floored against the gradient's dominant
// magnitude so dead directions do not produce 0/0 noise.
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
  double gmax = 0.0;
  for (double v : a) gmax = std::max(gmax, std::fabs(v));
  for (double v : b) gmax = std::max(gmax, std::fabs(v));
  const double floor = 1e-3 * gmax + 1e-300;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

// Smallest |pre-activation| over every ReLU unit of the net on input x.
inline double min_relu_margin(const NetSpec& net, const Matrix& x) {
  ForwardCache cache;
  net_forward_cached(net, x, &cache);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < net.layers.size(); ++k)
    if (std::holds_alternative<ReluLayer>(net.layers[k]))
      for (double v : cache.acts[k].data()) margin = std::min(margin, std::fabs(v));
  return margin;
}

}  // namespace detail

// Central-difference validation of mmd_loss_grad over every parameter of the
// critic (and generator, when present). Requires all ReLU pre-activations to
// sit at least 10*epsilon from zero so no unit flips inside the stencil.
inline GradReport finite_diff_check(const NetSpec& critic, const NetSpec* generator,
                                    const KernelSpec& spec, const Matrix& x, const Matrix& z,
                                    double epsilon) {
  if (!(epsilon > 0)) fail(ErrorCode::invalid_input, "finite_diff_check: epsilon > 0");
  const Matrix gz = generator ? net_forward(*generator, z) : z;
  double margin = std::min(detail::min_relu_margin(critic, x),
                           detail::min_relu_margin(critic, gz));
  if (generator) margin = std::min(margin, detail::min_relu_margin(*generator, z));
  if (margin < 10.0 * epsilon)
    fail(ErrorCode::kink_proximity, "finite_diff_check: ReLU pre-activation too close to 0");

  const LossGrad base = mmd_loss_grad(critic, generator, spec, x, z);

  NetSpec critic_work = critic;
  NetSpec gen_work = generator ? *generator : NetSpec{};
  std::vector<double> params = critic.pack();
  if (generator) {
    const auto gp = generator->pack();
    params.insert(params.end(), gp.begin(), gp.end());
  }
  const std::size_t nc = base.critic_param_count;

  GradReport report;
  report.analytic = base.grad;
  report.comparison.resize(params.size());
  const auto eval = [&](const std::vector<double>& p) {
    critic_work.unpack(std::span<const double>(p.data(), nc));
    if (generator) gen_work.unpack(std::span<const double>(p.data() + nc, p.size() - nc));
    return mmd_loss_only(critic_work, generator ? &gen_work : nullptr, spec, x, z);
  };
  std::vector<double> p = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    p[i] = params[i] + epsilon;
    const double up = eval(p);
    p[i] = params[i] - epsilon;
    const double down = eval(p);
    p[i] = params[i];
    report.comparison[i] = (up - down) / (2.0 * epsilon);
  }
  report.max_rel_error = detail::max_relative_error(report.analytic, report.comparison);
  report.cosine = detail::cosine_similarity(report.analytic, report.comparison);
  return report;
}

struct GaussianSampler {
  std::vector<double> mean;
  double stddev = 1.0;
};

inline Matrix draw_gaussian(const GaussianSampler& sampler, std::size_t rows, RngState& rng) {
  Matrix out(rows, sampler.mean.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < sampler.mean.size(); ++c)
      out(r, c) = sampler.mean[c] + sampler.stddev * rng.gaussian();
  return out;
}

// finite_diff_check with fresh Gaussian inputs, resampling (bounded) when the
// drawn inputs land too close to a ReLU kink.
inline GradReport finite_diff_check_sampled(const NetSpec& critic, const NetSpec* generator,
                                            const KernelSpec& spec, const GaussianSampler& px,
                                            const GaussianSampler& pz, std::size_t m,
                                            std::size_t n, RngState& rng, double epsilon,
                                            int max_retries = 20) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const Matrix x = draw_gaussian(px, m, rng);
    const Matrix z = draw_gaussian(pz, n, rng);
    try {
      return finite_diff_check(critic, generator, spec, x, z, epsilon);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kink_proximity) throw;
    }
  }
  fail(ErrorCode::kink_proximity, "finite_diff_check_sampled: retries exhausted");
}

namespace detail {

// Exact finite-dimensional feature expansion of (gamma <x,y> + coef)^degree:
// phi(x) indexed by degree-sized multisets over the d variables plus a
// constant symbol, with square-rooted multinomial weights.
struct PolyFeatureMap {
  std::size_t dim;
  int degree;
  // counts[f][k]: multiplicity of variable k in monomial f; counts[f][dim] is
  // the constant symbol's multiplicity.
  std::vector<std::vector<int>> counts;
  std::vector<double> sqrt_w;

  PolyFeatureMap(std::size_t d, const PolyKernel& k) : dim(d), degree(k.degree) {
    if (!(k.coef >= 0.0))
      fail(ErrorCode::invalid_input, "poly feature map requires coef >= 0");
    std::vector<int> cur(d + 1, 0);
    enumerate(k, cur, 0, k.degree);
  }

  void enumerate(const PolyKernel& k, std::vector<int>& cur, std::size_t sym, int left) {
    if (sym == dim) {
      cur[dim] = left;
      push(k, cur);
      cur[dim] = 0;
      return;
    }
    for (int c = 0; c <= left; ++c) {
      cur[sym] = c;
      enumerate(k, cur, sym + 1, left - c);
      cur[sym] = 0;
    }
  }

  void push(const PolyKernel& k, const std::vector<int>& cur) {
    double w = 1.0;
    int total = 0;
    double fact = 1.0;
    for (std::size_t s = 0; s <= dim; ++s) {
      for (int c = 1; c <= cur[s]; ++c) {
        ++total;
        fact *= static_cast<double>(total) / static_cast<double>(c);
      }
    }
    w = fact;  // multinomial coefficient degree! / prod(counts!)
    for (std::size_t s = 0; s < dim; ++s)
      for (int c = 0; c < cur[s]; ++c) w *= k.gamma;
    for (int c = 0; c < cur[dim]; ++c) w *= k.coef;
    counts.push_back(cur);
    sqrt_w.push_back(std::sqrt(w));
  }

  std::size_t size() const { return counts.size(); }

  void features(const double* x, double* phi) const {
    for (std::size_t f = 0; f < counts.size(); ++f) {
      double v = sqrt_w[f];
      for (std::size_t s = 0; s < dim; ++s)
        for (int c = 0; c < counts[f][s]; ++c) v *= x[s];
      phi[f] = v;
    }
  }

  // dL/dx += J_phi(x)^T dl_dphi
  void add_input_grad(const double* x, const double* dl_dphi, double* gx) const {
    for (std::size_t f = 0; f < counts.size(); ++f) {
      const double up = dl_dphi[f];
      if (up == 0.0) continue;
      for (std::size_t s = 0; s < dim; ++s) {
        const int c = counts[f][s];
        if (c == 0) continue;
        double deriv = sqrt_w[f] * static_cast<double>(c);
        for (int t = 0; t < c - 1; ++t) deriv *= x[s];
        for (std::size_t s2 = 0; s2 < dim; ++s2) {
          if (s2 == s) continue;
          for (int t = 0; t < counts[f][s2]; ++t) deriv *= x[s2];
        }
        gx[s] += up * deriv;
      }
    }
  }
};

// MMD_u^2 loss and parameter gradient through the polynomial feature map:
// O(N * F) instead of O(N^2) pairs. Identical estimator, different route.
inline LossGrad poly_feature_mmd_grad(const NetSpec& critic, const NetSpec* generator,
                                      const PolyKernel& kernel, const Matrix& x,
                                      const Matrix& z) {
  ForwardCache cx, cg, cz;
  const Matrix fx = net_forward_cached(critic, x, &cx);
  Matrix gz_in = z;
  if (generator) gz_in = net_forward_cached(*generator, z, &cg);
  const Matrix fz = net_forward_cached(critic, gz_in, &cz);

  const std::size_t m = fx.rows(), n = fz.rows(), d = fx.cols();
  const PolyFeatureMap map(d, kernel);
  const std::size_t nf = map.size();

  Matrix phix(m, nf), phiz(n, nf);
  for (std::size_t i = 0; i < m; ++i) map.features(fx.row_ptr(i), phix.row_ptr(i));
  for (std::size_t j = 0; j < n; ++j) map.features(fz.row_ptr(j), phiz.row_ptr(j));

  std::vector<double> sx(nf, 0.0), sz(nf, 0.0);
  double px = 0.0, pz = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t f = 0; f < nf; ++f) {
      sx[f] += phix(i, f);
      px += phix(i, f) * phix(i, f);
    }
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t f = 0; f < nf; ++f) {
      sz[f] += phiz(j, f);
      pz += phiz(j, f) * phiz(j, f);
    }
  double sx2 = 0.0, sz2 = 0.0, sxz = 0.0;
  for (std::size_t f = 0; f < nf; ++f) {
    sx2 += sx[f] * sx[f];
    sz2 += sz[f] * sz[f];
    sxz += sx[f] * sz[f];
  }
  const double cm = static_cast<double>(m) * static_cast<double>(m - 1);
  const double cn = static_cast<double>(n) * static_cast<double>(n - 1);
  const double cmn = static_cast<double>(m) * static_cast<double>(n);
  const double loss = (sx2 - px) / cm + (sz2 - pz) / cn - 2.0 * sxz / cmn;

  Matrix dfx(m, d), dfz(n, d);
  std::vector<double> dphi(nf);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t f = 0; f < nf; ++f)
      dphi[f] = 2.0 * (sx[f] - phix(i, f)) / cm - 2.0 * sz[f] / cmn;
    map.add_input_grad(fx.row_ptr(i), dphi.data(), dfx.row_ptr(i));
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t f = 0; f < nf; ++f)
      dphi[f] = 2.0 * (sz[f] - phiz(j, f)) / cn - 2.0 * sx[f] / cmn;
    map.add_input_grad(fz.row_ptr(j), dphi.data(), dfz.row_ptr(j));
  }

  LossGrad out;
  out.critic_param_count = critic.param_count();
  const std::size_t gen_params = generator ? generator->param_count() : 0;
  out.grad.assign(out.critic_param_count + gen_params, 0.0);
  std::span<double> critic_slice(out.grad.data(), out.critic_param_count);
  net_backward(critic, cx, dfx, critic_slice, nullptr);
  Matrix dgz;
  net_backward(critic, cz, dfz, critic_slice, generator ? &dgz : nullptr);
  if (generator) {
    std::span<double> gen_slice(out.grad.data() + out.critic_param_count, gen_params);
    net_backward(*generator, cg, dgz, gen_slice, nullptr);
  }
  out.loss = loss;
  return out;
}

}  // namespace detail

// Monte-Carlo check that minibatch gradients of MMD_u^2 at fixed parameters
// are unbiased: the mean over `reps` minibatch gradients (m rows per side) is
// compared against the gradient on one large sample of proxy_n rows per side.
// Reports cosine similarity, per-coordinate standard errors, and the fraction
// of coordinates within 3 standard errors of the proxy.
inline GradReport gradient_unbiasedness_mc(const NetSpec& critic, const NetSpec* generator,
                                           const KernelSpec& spec, const GaussianSampler& px,
                                           const GaussianSampler& pz, std::size_t m,
                                           std::size_t reps, RngState& rng,
                                           std::size_t proxy_n = 100000,
                                           unsigned threads = 1) {
  if (m < 2 || reps < 2) fail(ErrorCode::invalid_input, "gradient_unbiasedness_mc: m, reps");
  const std::size_t np =
      critic.param_count() + (generator ? generator->param_count() : 0);

  Matrix grads(reps, np);
  const RngState base = rng;
  parallel_for(reps, threads, [&](std::size_t r) {
    RngState local = base.substream(r);
    const Matrix x = draw_gaussian(px, m, local);
    const Matrix z = draw_gaussian(pz, m, local);
    const LossGrad lg = mmd_loss_grad(critic, generator, spec, x, z);
    for (std::size_t i = 0; i < np; ++i) grads(r, i) = lg.grad[i];
  });
  rng = base.substream(reps);

  GradReport report;
  report.comparison.assign(np, 0.0);
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < np; ++i) report.comparison[i] += grads(r, i);
  for (double& v : report.comparison) v /= static_cast<double>(reps);

  report.std_err.assign(np, 0.0);
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < np; ++i) {
      const double dv = grads(r, i) - report.comparison[i];
      report.std_err[i] += dv * dv;
    }
  for (double& v : report.std_err)
    v = std::sqrt(v / (static_cast<double>(reps - 1) * static_cast<double>(reps)));

  RngState proxy_rng = rng;
  const Matrix xl = draw_gaussian(px, proxy_n, proxy_rng);
  const Matrix zl = draw_gaussian(pz, proxy_n, proxy_rng);
  rng = proxy_rng;
  if (const auto* poly = std::get_if<PolyKernel>(&spec); poly && poly->coef >= 0.0) {
    report.analytic = detail::poly_feature_mmd_grad(critic, generator, *poly, xl, zl).grad;
  } else {
    report.analytic = mmd_loss_grad(critic, generator, spec, xl, zl).grad;
  }

  // Coordinates whose gradient is identically zero (dead directions) carry a
  // rounding-level stderr; a scale-relative floor keeps them from dominating.
  double gmax = 0.0;
  for (double v : report.analytic) gmax = std::max(gmax, std::fabs(v));
  for (double v : report.comparison) gmax = std::max(gmax, std::fabs(v));
  std::size_t within = 0;
  for (std::size_t i = 0; i < np; ++i)
    if (std::fabs(report.comparison[i] - report.analytic[i]) <=
        3.0 * report.std_err[i] + 1e-12 * gmax)
      ++within;
  report.frac_within_3stderr = static_cast<double>(within) / static_cast<double>(np);
  report.max_rel_error = detail::max_relative_error(report.analytic, report.comparison);
  report.cosine = detail::cosine_similarity(report.analytic, report.comparison);
  return report;
}

}  // namespace kmet
