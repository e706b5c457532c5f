// Acceptance suite: one test per criterion, each printing a PASS/FAIL line
// and its runtime.

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmet/kmet.hpp"

using namespace kmet;
using nlohmann::json;

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void criterion_line(int id, const char* name, bool pass, double seconds, double limit) {
  std::printf("[ACCEPTANCE] %02d %-28s %s  (%.2f s, limit %.0f s)\n", id, name,
              pass ? "PASS" : "FAIL", seconds, limit);
  std::fflush(stdout);
  EXPECT_TRUE(pass) << "criterion " << id << " (" << name << ")";
  EXPECT_LE(seconds, limit) << "criterion " << id << " exceeded its runtime limit";
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, RngState& rng, double shift = 0.0) {
  Matrix m(rows, cols);
  rng.fill_gaussian(m.data());
  if (shift != 0.0)
    for (double& v : m.data()) v += shift;
  return m;
}

double ks_statistic_uniform(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    d = std::max(d, values[i] - static_cast<double>(i) / n);
    d = std::max(d, static_cast<double>(i + 1) / n - values[i]);
  }
  return d;
}

}  // namespace

TEST(Acceptance, C01_EnergyMmdIdentity) {
  Stopwatch timer;
  RngState rng = RngState::seeded(101);
  bool pass = true;
  const std::array<double, 4> betas{0.75, 1.0, 1.5, 2.0};
  for (int t = 0; t < 50 && pass; ++t) {
    RngState local = rng.substream(t);
    const std::size_t d = 1 + static_cast<std::size_t>(local.uniform_below(32));
    const std::size_t m = 20 + static_cast<std::size_t>(local.uniform_below(181));
    const std::size_t n = 20 + static_cast<std::size_t>(local.uniform_below(181));
    const double beta = betas[local.uniform_below(4)];
    const Matrix x = gaussian_matrix(m, d, local);
    Matrix y = gaussian_matrix(n, d, local);
    const double shift = 1.5 + local.uniform01();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) y(i, c) += shift / std::sqrt(static_cast<double>(d));
    const double energy = energy_distance(x, y, beta).value;
    for (int zi = 0; zi < 3 && pass; ++zi) {
      std::vector<double> z0;
      if (zi > 0) {
        z0.resize(d);
        for (double& v : z0) v = (zi == 1 ? 1.0 : 2.0) * local.gaussian();
      }
      const double mmd = mmd2_unbiased(DistanceKernel{beta, z0}, x, y).value;
      if (std::fabs(mmd - energy) > 1e-12 * std::max(std::fabs(mmd), std::fabs(energy)))
        pass = false;
    }
  }
  criterion_line(1, "energy-mmd-identity", pass, timer.seconds(), 5);
}

TEST(Acceptance, C02_KidUnbiasedness) {
  Stopwatch timer;
  int good = 0;
  for (int seed = 0; seed < 20; ++seed) {
    RngState data_rng = RngState::seeded(200 + seed);
    const Matrix x = gaussian_matrix(2000, 16, data_rng);
    const Matrix y = gaussian_matrix(2000, 16, data_rng);
    RngState kid_rng = RngState::seeded(9000 + seed);
    const Estimate e = kid(x, y, 100, 200, kid_rng);
    if (std::fabs(e.value) <= 3.0 * e.std_error.value()) ++good;
  }
  criterion_line(2, "kid-unbiasedness", good >= 18, timer.seconds(), 60);
}

TEST(Acceptance, C03_FidBiasCurve) {
  Stopwatch timer;
  int good = 0;
  const std::array<std::size_t, 3> ns{100, 1000, 10000};
  for (int trial = 0; trial < 40; ++trial) {
    RngState rng = RngState::seeded(300 + trial);
    std::array<double, 3> means{};
    for (std::size_t t = 0; t < ns.size(); ++t) {
      RunningMeanVar acc;
      for (int r = 0; r < 10; ++r) {
        RngState local = rng.substream(t * 100 + r);
        acc.add(fid_estimate(gaussian_matrix(ns[t], 16, local),
                             gaussian_matrix(ns[t], 16, local)));
      }
      means[t] = acc.mean();
    }
    if (means[0] > means[1] && means[1] > means[2] && means[2] > 0.0) ++good;
  }
  criterion_line(3, "fid-bias-curve", good >= 38, timer.seconds(), 120);
}

TEST(Acceptance, C04_ExpectedFid1dAnalytic) {
  Stopwatch timer;
  // P = N(0,1), Q = N(1,4), m = 20, n = 50.
  RngState rng = RngState::seeded(400);
  RunningMeanVar acc;
  for (int r = 0; r < 20000; ++r) {
    RngState local = rng.substream(r);
    RunningMeanVar p, q;
    for (int i = 0; i < 20; ++i) p.add(local.gaussian());
    for (int i = 0; i < 50; ++i) q.add(1.0 + 2.0 * local.gaussian());
    const double dmean = p.mean() - q.mean();
    const double ds = p.std_sample() - q.std_sample();
    acc.add(dmean * dmean + ds * ds);
  }
  const double expected = expected_fid_1d_normal(0.0, 1.0, 1.0, 2.0, 20, 50);
  const bool pass = std::fabs(acc.mean() - expected) <= 3.0 * acc.std_error();
  criterion_line(4, "expected-fid-1d-analytic", pass, timer.seconds(), 30);
}

TEST(Acceptance, C05_FidOrderingReversal1d) {
  Stopwatch timer;
  bool pass = true;
  for (std::size_t m : {5u, 10u, 50u}) {
    RngState rng = RngState::seeded(500 + m);
    const BiasReport report = fid_ordering_reversal_1d(m, 200000, rng);
    double true_p1 = -1.0, true_p2 = -1.0;
    for (const auto& [k, v] : report.params) {
      if (k == "true_fid_p1") true_p1 = v;
      if (k == "true_fid_p2") true_p2 = v;
    }
    const double md = static_cast<double>(m);
    if (std::fabs(true_p1 - 1.0 / (md * md)) > 1e-15 || true_p2 != 0.0) pass = false;
    if (!(true_p1 > true_p2)) pass = false;
    const BiasRow& diff = report.rows[2];
    if (!(diff.analytic.value() < 0.0)) pass = false;  // expected estimates reversed
    if (std::fabs(diff.mean - diff.analytic.value()) > 3.0 * diff.std_err) pass = false;
  }
  criterion_line(5, "fid-ordering-reversal-1d", pass, timer.seconds(), 60);
}

TEST(Acceptance, C06_WassersteinSplittingBias) {
  Stopwatch timer;
  RngState rng = RngState::seeded(600);
  const BiasReport report = wasserstein_splitting_bias(1000000, rng);
  const BiasRow& row = report.rows[0];
  const double analytic = 1.0 - 2.0 * std_normal_cdf(-1.0 / std::sqrt(2.0));
  const bool pass = std::fabs(row.mean - analytic) <= 3.0 * row.std_err &&
                    std::fabs(analytic - 0.5204998778130465) < 1e-12 &&
                    row.mean + 3.0 * row.std_err < 1.0;
  criterion_line(6, "wasserstein-splitting-bias", pass, timer.seconds(), 20);
}

TEST(Acceptance, C07_MaxMmdSplittingBias) {
  Stopwatch timer;
  RngState rng = RngState::seeded(700);
  const BiasReport tiny = max_mmd_splitting_bias(2, 2, 100000, rng);
  const double mean_tiny = tiny.rows[0].mean;
  RngState rng2 = RngState::seeded(701);
  const BiasReport big = max_mmd_splitting_bias(500, 500, 2000, rng2);
  const bool pass = mean_tiny >= 0.55 && mean_tiny <= 0.65 && big.rows[0].mean >= 0.98 &&
                    mean_tiny + 3.0 * tiny.rows[0].std_err < 1.0;
  criterion_line(7, "max-mmd-splitting-bias", pass, timer.seconds(), 60);
}

TEST(Acceptance, C08_CramerDegeneracy) {
  Stopwatch timer;
  bool pass = true;
  const Matrix x = Matrix::from_rows({{0.0}, {0.0}});
  for (double t : {0.5, 1.0, 7.0}) {
    const Matrix y = Matrix::from_rows({{t}, {t}});
    if (cramer_surrogate(x, y).value != 0.0) pass = false;
    if (energy_distance(x, y, 1.0).value != t) pass = false;
  }
  criterion_line(8, "cramer-degeneracy", pass, timer.seconds(), 1);
}

TEST(Acceptance, C09_GradientFiniteDifferences) {
  Stopwatch timer;
  bool pass = true;
  double worst = 0.0;
  for (int seed = 0; seed < 5; ++seed) {
    RngState net_rng = RngState::seeded(900 + seed);
    const NetSpec critic = make_mlp(8, {16, 4}, net_rng);
    GaussianSampler px{std::vector<double>(8, 0.5), 1.0};
    GaussianSampler pz{std::vector<double>(8, 0.0), 1.0};
    RngState data_rng = RngState::seeded(950 + seed);
    const GradReport report = finite_diff_check_sampled(
        critic, nullptr, RqMixture{default_alphas()}, px, pz, 24, 24, data_rng, 1e-5);
    worst = std::max(worst, report.max_rel_error);
    if (report.max_rel_error > 1e-5) pass = false;
  }
  std::printf("    (worst max_rel_error over 5 seeds: %.3g)\n", worst);
  criterion_line(9, "gradient-finite-diff", pass, timer.seconds(), 30);
}

TEST(Acceptance, C10_GradientUnbiasednessMc) {
  Stopwatch timer;
  RngState net_rng = RngState::seeded(1000);
  const NetSpec critic = make_mlp(6, {12, 3}, net_rng);
  NetSpec generator = make_mlp(4, {8, 6}, net_rng);
  GaussianSampler px{std::vector<double>(6, 0.7), 1.0};
  GaussianSampler pz{std::vector<double>(4, 0.0), 1.0};
  const PolyKernel kernel{3, 1.0 / 3.0, 1.0};
  RngState mc_rng = RngState::seeded(1001);
  const GradReport report = gradient_unbiasedness_mc(critic, &generator, kernel, px, pz, 8,
                                                     10000, mc_rng, 100000);
  std::printf("    (cosine %.5f, frac within 3 stderr %.4f)\n", report.cosine,
              report.frac_within_3stderr.value());
  const bool pass = report.cosine >= 0.99 && report.frac_within_3stderr.value() >= 0.95;
  criterion_line(10, "gradient-unbiasedness-mc", pass, timer.seconds(), 180);
}

TEST(Acceptance, C11_RelativeTestCalibrationAndPower) {
  Stopwatch timer;
  const KernelSpec spec = RqMixture{default_alphas()};

  std::vector<double> pvals;
  pvals.reserve(500);
  for (int s = 0; s < 500; ++s) {
    RngState local = RngState::seeded(1100).substream(s);
    const Matrix xc = gaussian_matrix(500, 8, local);
    const Matrix xb = gaussian_matrix(500, 8, local);
    const Matrix z = gaussian_matrix(500, 8, local);
    pvals.push_back(
        relative_similarity_test(spec, xc, xb, z, RngState::seeded(4000 + s)).p_value);
  }
  const double ks = ks_statistic_uniform(pvals);

  int power_hits = 0;
  for (int s = 0; s < 200; ++s) {
    RngState local = RngState::seeded(1200).substream(s);
    const Matrix xc = gaussian_matrix(500, 8, local);
    const Matrix xb = gaussian_matrix(500, 8, local, 0.5);
    const Matrix z = gaussian_matrix(500, 8, local);
    if (relative_similarity_test(spec, xc, xb, z, RngState::seeded(5000 + s)).p_value < 0.01)
      ++power_hits;
  }
  std::printf("    (null KS %.4f, power hits %d/200)\n", ks, power_hits);
  const bool pass = ks <= 0.08 && power_hits >= 190;
  criterion_line(11, "relative-test-calibration", pass, timer.seconds(), 180);
}

TEST(Acceptance, C12_LrControllerSemantics) {
  Stopwatch timer;
  bool pass = true;

  AdaptationState state{1e-4, 0, {}};
  for (double p : {0.5, 0.5, 0.5}) state = lr_controller_step(state, p).first;
  if (state.lr != 5e-5) pass = false;

  state = AdaptationState{1e-4, 0, {}};
  for (double p : {0.5, 0.5, 0.01, 0.5, 0.5}) state = lr_controller_step(state, p).first;
  if (state.lr != 1e-4) pass = false;

  state = AdaptationState{1e-4, 2, {}};
  const auto [next, action] = lr_controller_step(state, 0.01);
  if (action != LrAction::kept || next.consecutive_failures != 0 || next.lr != 1e-4) pass = false;

  // Long failure streaks halve repeatedly but respect the floor.
  state = AdaptationState{8e-4, 0, {0.05, 3, 0.5, 1e-4}};
  for (int i = 0; i < 30; ++i) state = lr_controller_step(state, 0.9).first;
  if (state.lr != 1e-4) pass = false;

  criterion_line(12, "lr-controller-semantics", pass, timer.seconds(), 1);
}

TEST(Acceptance, C13_NumericsBundle) {
  Stopwatch timer;
  bool pass = true;

  RngState rng = RngState::seeded(1300);
  for (std::size_t d : {4u, 64u, 256u}) {
    Matrix b(d, d);
    rng.fill_gaussian(b.data());
    SymMatrix a(d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) {
        double v = 0.0;
        for (std::size_t k = 0; k < d; ++k) v += b(i, k) * b(j, k);
        a.set(i, j, v / static_cast<double>(d));
      }
    const SymMatrix s = psd_sqrt(a);
    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double v = 0.0;
        for (std::size_t k = 0; k < d; ++k) v += s(i, k) * s(k, j);
        const double diff = v - a(i, j);
        err += diff * diff;
      }
    if (std::sqrt(err) > 1e-10 * a.frobenius_norm()) pass = false;
  }

  {
    GaussianMoments g;
    const std::size_t d = 32;
    g.mean.assign(d, 0.0);
    for (double& v : g.mean) v = rng.gaussian();
    Matrix b(d, d);
    rng.fill_gaussian(b.data());
    g.cov = SymMatrix(d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) {
        double v = 0.0;
        for (std::size_t k = 0; k < d; ++k) v += b(i, k) * b(j, k);
        g.cov.set(i, j, v / static_cast<double>(d));
      }
    if (frechet_distance(g, g) > 1e-8) pass = false;
  }

  {
    const std::size_t c = 10;
    Matrix onehots(c, c, 0.0);
    for (std::size_t i = 0; i < c; ++i) onehots(i, i) = 1.0;
    if (std::fabs(inception_score(onehots) - static_cast<double>(c)) > 1e-12) pass = false;
  }

  if (std::fabs(d_m_coefficient(2) - std::sqrt(2.0 / 3.14159265358979323846)) > 1e-12)
    pass = false;

  criterion_line(13, "numerics-bundle", pass, timer.seconds(), 30);
}

namespace {

struct CliRun {
  int exit_code = -1;
  std::string out;
};

CliRun run_cli(const std::string& args) {
  const char* cli = std::getenv("KMET_CLI");
  CliRun res;
  if (!cli) return res;
  const std::string cmd = std::string(cli) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return res;
  std::array<char, 4096> buf;
  while (std::size_t got = fread(buf.data(), 1, buf.size(), pipe)) res.out.append(buf.data(), got);
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

// Identical payloads modulo wall time and the echoed worker cap (an input
// that by contract does not change results).
bool payloads_match(const std::string& a, const std::string& b) {
  json ja = json::parse(a, nullptr, false);
  json jb = json::parse(b, nullptr, false);
  if (ja.is_discarded() || jb.is_discarded()) return false;
  ja.erase("wall_time_s");
  jb.erase("wall_time_s");
  if (ja.contains("params") && ja["params"].is_object()) ja["params"].erase("threads");
  if (jb.contains("params") && jb["params"].is_object()) jb["params"].erase("threads");
  return ja == jb;
}

}  // namespace

TEST(Acceptance, C14_CliThreadDeterminism) {
  Stopwatch timer;
  if (!std::getenv("KMET_CLI")) {
    criterion_line(14, "cli-thread-determinism", false, timer.seconds(), 300);
    GTEST_SKIP() << "KMET_CLI not set";
  }
  char templ[] = "/tmp/kmet_accept_XXXXXX";
  const std::string dir = mkdtemp(templ);
  RngState rng = RngState::seeded(1400);
  save_fmat(gaussian_matrix(200, 6, rng), dir + "/a.fmat");
  save_fmat(gaussian_matrix(180, 6, rng, 0.4), dir + "/b.fmat");
  save_fmat(gaussian_matrix(160, 6, rng), dir + "/c.fmat");

  const std::vector<std::string> commands = {
      "mmd --kernel rq --x " + dir + "/a.fmat --y " + dir + "/b.fmat --block 50 --reps 40 --seed 11",
      "kid --x " + dir + "/a.fmat --y " + dir + "/b.fmat --block 64 --reps 30 --seed 5",
      "relative-test --candidate " + dir + "/a.fmat --baseline " + dir + "/b.fmat --reference " +
          dir + "/c.fmat --kernel rq --seed 3",
      "bias-demo wasserstein --reps 20000 --seed 7",
      "bias-demo max-mmd --m-tr 2 --n-tr 2 --reps 20000 --seed 9",
      "bias-demo curves --metric kid --pair same --d 8 --n-list 10,50 --reps 20 --seed 13",
      "bias-demo curves --metric fid --pair shifted --d 8 --n-list 100 --reps 10 --seed 15",
      "bias-demo reversal-1d --m 10 --reps 20000 --seed 17",
      "bias-demo reversal-relu --d 6 --m 60 --mc 20000 --seed 19",
      "gradcheck --layers 6,8,3 --kernel rq:1,2 --seed 23 --epsilon 1e-5",
  };
  bool pass = true;
  for (const std::string& cmd : commands) {
    const CliRun one = run_cli(cmd + " --threads 1");
    const CliRun three = run_cli(cmd + " --threads 3");
    if (one.exit_code != 0 || three.exit_code != 0 || !payloads_match(one.out, three.out)) {
      std::printf("    (mismatch or failure for: %s)\n", cmd.c_str());
      pass = false;
    }
  }
  criterion_line(14, "cli-thread-determinism", pass, timer.seconds(), 300);
}
