#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kmet/gradnet.hpp"
#include "kmet/rng.hpp"

using namespace kmet;

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, RngState& rng, double shift = 0.0) {
  Matrix m(rows, cols);
  rng.fill_gaussian(m.data());
  if (shift != 0.0)
    for (double& v : m.data()) v += shift;
  return m;
}

NetSpec linear_net(const Matrix& w) {
  NetSpec net;
  net.input_dim = w.cols();
  AffineLayer a;
  a.weight = w;
  a.bias.assign(w.rows(), 0.0);
  net.layers.emplace_back(std::move(a));
  return net;
}

}  // namespace

TEST(NetForward, IdentityReluAndHandComputed) {
  Matrix eye(3, 3);
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
  const NetSpec id = linear_net(eye);
  RngState rng = RngState::seeded(81);
  const Matrix x = gaussian_matrix(5, 3, rng);
  EXPECT_EQ(net_forward(id, x), x);

  NetSpec relu_only;
  relu_only.input_dim = 2;
  relu_only.layers.emplace_back(ReluLayer{});
  const Matrix in = Matrix::from_rows({{-1.0, 2.0}});
  const Matrix out = net_forward(relu_only, in);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 2.0);

  // Two-layer net against hand-computed products.
  NetSpec two;
  two.input_dim = 2;
  AffineLayer l1;
  l1.weight = Matrix::from_rows({{1.0, -1.0}, {2.0, 0.5}});
  l1.bias = {0.5, -1.0};
  two.layers.emplace_back(l1);
  two.layers.emplace_back(ReluLayer{});
  AffineLayer l2;
  l2.weight = Matrix::from_rows({{1.0, 1.0}});
  l2.bias = {0.25};
  two.layers.emplace_back(l2);
  const Matrix probe = Matrix::from_rows({{1.0, 2.0}});
  // layer1: (1*1 - 1*2 + 0.5, 2*1 + 0.5*2 - 1) = (-0.5, 2) -> relu (0, 2)
  // layer2: 0 + 2 + 0.25 = 2.25
  EXPECT_DOUBLE_EQ(net_forward(two, probe)(0, 0), 2.25);
  EXPECT_EQ(two.output_dim(), 1u);
}

TEST(NetSpec, PackUnpackRoundTripsBitExact) {
  RngState rng = RngState::seeded(82);
  NetSpec net = make_mlp(4, {7, 3}, rng);
  const std::vector<double> packed = net.pack();
  EXPECT_EQ(packed.size(), net.param_count());
  NetSpec copy = net;
  for (double& v : copy.pack()) v = 0.0;  // pack returns a copy; net untouched
  copy.unpack(packed);
  EXPECT_EQ(copy.pack(), packed);
  std::vector<double> wrong(packed.size() + 1, 0.0);
  EXPECT_THROW(net.unpack(wrong), Error);
}

TEST(MmdLossGrad, LinearDotClosedForm) {
  RngState rng = RngState::seeded(83);
  Matrix w(3, 4);
  rng.fill_gaussian(w.data());
  const NetSpec critic = linear_net(w);
  const Matrix x = gaussian_matrix(10, 4, rng, 0.5);
  const Matrix z = gaussian_matrix(12, 4, rng);
  const LossGrad lg = mmd_loss_grad(critic, nullptr, DotKernel{}, x, z);

  // Closed form: loss = (||W Sx||^2 - sum ||W x_i||^2) / (m(m-1)) + (z terms)
  //               - 2 <W Sx, W Sz> / (mn);
  // d/dW ||W v||^2 = 2 (W v) v^T.
  const std::size_t m = x.rows(), n = z.rows(), d = 4, o = 3;
  std::vector<double> sx(d, 0.0), sz(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) sx[c] += x(i, c);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) sz[c] += z(j, c);
  const auto apply_w = [&](const std::vector<double>& v) {
    std::vector<double> out(o, 0.0);
    for (std::size_t r = 0; r < o; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r] += w(r, c) * v[c];
    return out;
  };
  Matrix grad_oracle(o, d);
  const double cm = static_cast<double>(m) * (m - 1.0);
  const double cn = static_cast<double>(n) * (n - 1.0);
  const double cmn = static_cast<double>(m) * static_cast<double>(n);
  const auto add_outer = [&](const std::vector<double>& wv, const std::vector<double>& v,
                             double scale) {
    for (std::size_t r = 0; r < o; ++r)
      for (std::size_t c = 0; c < d; ++c) grad_oracle(r, c) += scale * 2.0 * wv[r] * v[c];
  };
  add_outer(apply_w(sx), sx, 1.0 / cm);
  for (std::size_t i = 0; i < m; ++i) {
    const std::vector<double> xi(x.row_ptr(i), x.row_ptr(i) + d);
    add_outer(apply_w(xi), xi, -1.0 / cm);
  }
  add_outer(apply_w(sz), sz, 1.0 / cn);
  for (std::size_t j = 0; j < n; ++j) {
    const std::vector<double> zj(z.row_ptr(j), z.row_ptr(j) + d);
    add_outer(apply_w(zj), zj, -1.0 / cn);
  }
  // Cross: -2/(mn) * d<W Sx, W Sz>/dW = -2/(mn) * (W Sz Sx^T + W Sx Sz^T).
  const auto wsx = apply_w(sx);
  const auto wsz = apply_w(sz);
  for (std::size_t r = 0; r < o; ++r)
    for (std::size_t c = 0; c < d; ++c)
      grad_oracle(r, c) -= 2.0 / cmn * (wsz[r] * sx[c] + wsx[r] * sz[c]);

  double max_err = 0.0, scale = 0.0;
  for (std::size_t r = 0; r < o; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      max_err = std::max(max_err, std::fabs(grad_oracle(r, c) - lg.grad[r * d + c]));
      scale = std::max(scale, std::fabs(grad_oracle(r, c)));
    }
  EXPECT_LE(max_err, 1e-10 * std::max(scale, 1.0));
  // Bias gradients vanish for the dot kernel with identical bias on both sides.
  for (std::size_t b = 0; b < o; ++b) EXPECT_NEAR(lg.grad[o * d + b], 0.0, 1e-12);
}

TEST(MmdLossGrad, ZeroedLastLayerGivesZeroLossAndGradient) {
  RngState rng = RngState::seeded(84);
  NetSpec critic = make_mlp(3, {5, 2}, rng);
  // Zero the final affine layer: all features collapse to the bias point.
  auto& last = std::get<AffineLayer>(critic.layers.back());
  for (double& v : last.weight.data()) v = 0.0;
  for (double& v : last.bias) v = 0.0;
  const Matrix x = gaussian_matrix(8, 3, rng);
  const Matrix z = gaussian_matrix(9, 3, rng, 1.0);
  const LossGrad lg = mmd_loss_grad(critic, nullptr, RbfMixture{{1.0}}, x, z);
  EXPECT_DOUBLE_EQ(lg.loss, 0.0);
  // Gradients of everything upstream of the zero multiplication are zero.
  const std::size_t first_params = 3 * 5 + 5;
  for (std::size_t i = 0; i < first_params; ++i) EXPECT_DOUBLE_EQ(lg.grad[i], 0.0);
}

TEST(MmdLossGrad, RowPermutationInvariance) {
  RngState rng = RngState::seeded(85);
  const NetSpec critic = make_mlp(4, {6, 3}, rng);
  const Matrix x = gaussian_matrix(12, 4, rng, 0.4);
  const Matrix z = gaussian_matrix(11, 4, rng);
  const LossGrad base = mmd_loss_grad(critic, nullptr, RqMixture{{1.0, 2.0}}, x, z);

  RngState perm_rng = RngState::seeded(86);
  const auto perm = random_permutation(x.rows(), perm_rng);
  Matrix xp(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) xp(i, c) = x(perm[i], c);
  const LossGrad permuted = mmd_loss_grad(critic, nullptr, RqMixture{{1.0, 2.0}}, xp, z);
  EXPECT_LE(std::fabs(base.loss - permuted.loss), 1e-12 * std::max(1.0, std::fabs(base.loss)));
  for (std::size_t i = 0; i < base.grad.size(); ++i)
    EXPECT_LE(std::fabs(base.grad[i] - permuted.grad[i]),
              1e-12 * std::max(1.0, std::fabs(base.grad[i])));
}

TEST(MmdLossGrad, KernelDoublingDoublesLossAndGradientExactly) {
  RngState rng = RngState::seeded(87);
  const NetSpec critic = make_mlp(3, {4, 2}, rng);
  const Matrix x = gaussian_matrix(7, 3, rng, 0.3);
  const Matrix z = gaussian_matrix(8, 3, rng);
  const LossGrad a = mmd_loss_grad(critic, nullptr, PolyKernel{1, 0.5, 0.25}, x, z);
  const LossGrad b = mmd_loss_grad(critic, nullptr, PolyKernel{1, 1.0, 0.5}, x, z);
  EXPECT_EQ(b.loss, 2.0 * a.loss);
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_EQ(b.grad[i], 2.0 * a.grad[i]);
}

TEST(FiniteDiffCheck, LinearDotIsExactToRoundoff) {
  RngState rng = RngState::seeded(88);
  Matrix w(2, 3);
  rng.fill_gaussian(w.data());
  const NetSpec critic = linear_net(w);
  const Matrix x = gaussian_matrix(9, 3, rng, 0.8);
  const Matrix z = gaussian_matrix(9, 3, rng);
  const GradReport report = finite_diff_check(critic, nullptr, DotKernel{}, x, z, 1e-4);
  EXPECT_LE(report.max_rel_error, 1e-8);
  EXPECT_GE(report.cosine, 1.0 - 1e-12);
}

TEST(FiniteDiffCheck, ReluRqConfigs) {
  RngState rng = RngState::seeded(89);
  for (int seed = 0; seed < 2; ++seed) {
    RngState net_rng = RngState::seeded(900 + seed);
    const NetSpec critic = make_mlp(8, {16, 4}, net_rng);
    GaussianSampler px{std::vector<double>(8, 0.5), 1.0};
    GaussianSampler pz{std::vector<double>(8, 0.0), 1.0};
    RngState data_rng = RngState::seeded(950 + seed);
    const GradReport report = finite_diff_check_sampled(
        critic, nullptr, RqMixture{default_alphas()}, px, pz, 24, 24, data_rng, 1e-5);
    EXPECT_LE(report.max_rel_error, 1e-5);
  }
}

TEST(FiniteDiffCheck, CorruptedGradientIsFlagged) {
  RngState rng = RngState::seeded(90);
  RngState net_rng = RngState::seeded(91);
  const NetSpec critic = make_mlp(4, {6, 2}, net_rng);
  GaussianSampler px{std::vector<double>(4, 0.4), 1.0};
  GaussianSampler pz{std::vector<double>(4, 0.0), 1.0};
  const GradReport report = finite_diff_check_sampled(critic, nullptr, RqMixture{{1.0}}, px, pz,
                                                      16, 16, rng, 1e-5);
  ASSERT_LE(report.max_rel_error, 1e-5);
  std::vector<double> corrupted = report.analytic;
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < corrupted.size(); ++i)
    if (std::fabs(corrupted[i]) > std::fabs(corrupted[argmax])) argmax = i;
  corrupted[argmax] *= 2.0;
  EXPECT_GT(detail::max_relative_error(corrupted, report.comparison), 0.1);
}

TEST(FiniteDiffCheck, KinkProximityIsDetected) {
  // Identity weights with zero bias and an input of zeros puts a ReLU
  // pre-activation exactly at 0.
  NetSpec critic;
  critic.input_dim = 2;
  AffineLayer a;
  a.weight = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  a.bias = {0.0, 0.0};
  critic.layers.emplace_back(a);
  critic.layers.emplace_back(ReluLayer{});
  AffineLayer b;
  b.weight = Matrix::from_rows({{1.0, 1.0}});
  b.bias = {0.0};
  critic.layers.emplace_back(b);
  const Matrix x = Matrix::from_rows({{0.0, 0.0}, {1.0, 1.0}});
  const Matrix z = Matrix::from_rows({{0.5, 0.5}, {1.5, 0.5}});
  try {
    finite_diff_check(critic, nullptr, RqMixture{{1.0}}, x, z, 1e-5);
    FAIL() << "expected kink_proximity";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kink_proximity);
  }
}

TEST(PolyFeaturePath, MatchesPairwiseRoute) {
  RngState rng = RngState::seeded(92);
  const NetSpec critic = make_mlp(4, {6, 3}, rng);
  NetSpec generator = make_mlp(3, {5, 4}, rng);
  const Matrix x = gaussian_matrix(9, 4, rng, 0.5);
  const Matrix z = gaussian_matrix(8, 3, rng);
  const PolyKernel poly{3, 1.0 / 3.0, 1.0};
  const LossGrad pairwise = mmd_loss_grad(critic, &generator, poly, x, z);
  const LossGrad feature = detail::poly_feature_mmd_grad(critic, &generator, poly, x, z);
  EXPECT_LE(std::fabs(pairwise.loss - feature.loss),
            1e-12 * std::max(1.0, std::fabs(pairwise.loss)));
  ASSERT_EQ(pairwise.grad.size(), feature.grad.size());
  double gmax = 0.0;
  for (double v : pairwise.grad) gmax = std::max(gmax, std::fabs(v));
  for (std::size_t i = 0; i < pairwise.grad.size(); ++i)
    EXPECT_LE(std::fabs(pairwise.grad[i] - feature.grad[i]), 1e-10 * std::max(gmax, 1.0));
}

TEST(GradientUnbiasednessMc, LinearDotMatchesPopulationClosedForm) {
  RngState rng = RngState::seeded(93);
  Matrix w(2, 3);
  rng.fill_gaussian(w.data());
  const NetSpec critic = linear_net(w);
  const std::vector<double> mu_x{0.8, -0.4, 0.6};
  GaussianSampler px{mu_x, 1.0};
  GaussianSampler pz{std::vector<double>(3, 0.0), 1.0};

  RngState mc_rng = RngState::seeded(94);
  const GradReport report =
      gradient_unbiasedness_mc(critic, nullptr, DotKernel{}, px, pz, 8, 4000, mc_rng, 20000);

  // Population gradient of ||W delta||^2 wrt W is 2 (W delta) delta^T; zero
  // for the biases.
  std::vector<double> pop(w.size() + 2, 0.0);
  std::vector<double> wd(2, 0.0);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) wd[r] += w(r, c) * mu_x[c];
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) pop[r * 3 + c] = 2.0 * wd[r] * mu_x[c];
  double gmax = 0.0;
  for (double v : pop) gmax = std::max(gmax, std::fabs(v));
  std::size_t within = 0;
  for (std::size_t i = 0; i < pop.size(); ++i)
    if (std::fabs(report.comparison[i] - pop[i]) <= 3.0 * report.std_err[i] + 1e-12 * gmax)
      ++within;
  EXPECT_GE(static_cast<double>(within) / pop.size(), 0.85);
}

TEST(GradientUnbiasednessMc, SmallestMinibatchContract) {
  RngState rng = RngState::seeded(95);
  RngState net_rng = RngState::seeded(96);
  const NetSpec critic = make_mlp(4, {8, 3}, net_rng);
  GaussianSampler px{std::vector<double>(4, 0.7), 1.0};
  GaussianSampler pz{std::vector<double>(4, 0.0), 1.0};
  const PolyKernel poly{3, 0.25, 1.0};
  const GradReport report =
      gradient_unbiasedness_mc(critic, nullptr, poly, px, pz, 2, 12000, rng, 30000);
  EXPECT_GE(report.frac_within_3stderr.value(), 0.9);
  EXPECT_GE(report.cosine, 0.95);
}

TEST(GradientUnbiasednessMc, DeterministicAcrossThreadCounts) {
  RngState net_rng = RngState::seeded(97);
  const NetSpec critic = make_mlp(3, {4, 2}, net_rng);
  GaussianSampler px{std::vector<double>(3, 0.5), 1.0};
  GaussianSampler pz{std::vector<double>(3, 0.0), 1.0};
  RngState a = RngState::seeded(98), b = RngState::seeded(98);
  const GradReport r1 =
      gradient_unbiasedness_mc(critic, nullptr, PolyKernel{3, 0.5, 1.0}, px, pz, 4, 500, a, 5000, 1);
  const GradReport r4 =
      gradient_unbiasedness_mc(critic, nullptr, PolyKernel{3, 0.5, 1.0}, px, pz, 4, 500, b, 5000, 4);
  EXPECT_EQ(r1.comparison, r4.comparison);
  EXPECT_EQ(r1.analytic, r4.analytic);
  EXPECT_EQ(r1.std_err, r4.std_err);
}
