// kmet command-line interface: kernel two-sample metrics, generative-model
// scores, bias demonstrations, and gradient checks, with JSON reports.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kmet/kmet.hpp"

using nlohmann::json;

namespace {

struct Report {
  std::string command;
  json params = json::object();
  json result = json::object();
};

std::chrono::steady_clock::time_point g_start;

void emit(const Report& r) {
  json out;
  out["command"] = r.command;
  out["params"] = r.params;
  out["result"] = r.result;
  out["version"] = kmet::version_string;
  const auto elapsed = std::chrono::steady_clock::now() - g_start;
  out["wall_time_s"] = std::chrono::duration<double>(elapsed).count();
  std::cout << out.dump(2) << '\n';
}

json estimate_json(const kmet::Estimate& e) {
  json j;
  j["value"] = e.value;
  j["std_error"] = e.std_error ? json(*e.std_error) : json(nullptr);
  j["block_size"] = e.block_size ? json(*e.block_size) : json(nullptr);
  j["reps"] = e.reps ? json(*e.reps) : json(nullptr);
  return j;
}

json bias_report_json(const kmet::BiasReport& r) {
  json j;
  j["experiment"] = r.experiment;
  json params = json::object();
  for (const auto& [k, v] : r.params) params[k] = v;
  j["params"] = params;
  json rows = json::array();
  for (const auto& row : r.rows) {
    json jr;
    jr["label"] = row.label;
    jr["n"] = row.n;
    jr["mean"] = row.mean;
    jr["std"] = row.std_dev;
    jr["stderr"] = row.std_err;
    jr["analytic"] = row.analytic ? json(*row.analytic) : json(nullptr);
    rows.push_back(jr);
  }
  j["rows"] = rows;
  return j;
}

void print_bias_csv(const kmet::BiasReport& r) {
  std::printf("label,n,mean,std,stderr,analytic\n");
  for (const auto& row : r.rows) {
    std::printf("%s,%.17g,%.17g,%.17g,%.17g,", row.label.c_str(), row.n, row.mean, row.std_dev,
                row.std_err);
    if (row.analytic)
      std::printf("%.17g\n", *row.analytic);
    else
      std::printf("\n");
  }
}

json grad_report_json(const kmet::GradReport& r) {
  json j;
  j["analytic"] = r.analytic;
  j["comparison"] = r.comparison;
  if (!r.std_err.empty()) j["std_err"] = r.std_err;
  j["max_rel_error"] = r.max_rel_error;
  j["cosine"] = r.cosine;
  if (r.frac_within_3stderr) j["frac_within_3stderr"] = *r.frac_within_3stderr;
  j["param_count"] = r.analytic.size();
  return j;
}

// Applies the standalone --sigmas/--alphas/--beta overrides onto a parsed
// kernel of the matching family.
kmet::ParsedKernel build_kernel(const std::string& kernel_str, const std::string& sigmas,
                                const std::string& alphas, double beta) {
  kmet::ParsedKernel parsed = kmet::parse_kernel(kernel_str);
  if (!sigmas.empty()) {
    if (auto* k = std::get_if<kmet::RbfMixture>(&parsed.spec))
      k->sigmas = kmet::detail::parse_list(sigmas, "--sigmas");
    else
      kmet::fail(kmet::ErrorCode::invalid_input, "--sigmas only applies to rbf kernels");
  }
  if (!alphas.empty()) {
    if (auto* k = std::get_if<kmet::RqMixture>(&parsed.spec))
      k->alphas = kmet::detail::parse_list(alphas, "--alphas");
    else if (auto* kd = std::get_if<kmet::RqDot>(&parsed.spec))
      kd->alphas = kmet::detail::parse_list(alphas, "--alphas");
    else
      kmet::fail(kmet::ErrorCode::invalid_input, "--alphas only applies to rq kernels");
  }
  if (beta > 0.0) {
    if (auto* k = std::get_if<kmet::DistanceKernel>(&parsed.spec))
      k->beta = beta;
    else
      kmet::fail(kmet::ErrorCode::invalid_input, "--beta only applies to dist kernels");
  }
  kmet::validate_kernel(parsed.spec);
  return parsed;
}

std::vector<std::size_t> parse_size_list(const std::string& s, const char* who) {
  std::vector<std::size_t> out;
  for (double v : kmet::detail::parse_list(s, who)) {
    if (v < 0 || v != std::floor(v))
      kmet::fail(kmet::ErrorCode::invalid_input, std::string(who) + ": expected integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  g_start = std::chrono::steady_clock::now();
  CLI::App app{"kmet: kernel two-sample metrics and generative-model evaluation"};
  app.require_subcommand(1);

  // ---- mmd -----------------------------------------------------------------
  auto* mmd_cmd = app.add_subcommand("mmd", "Squared MMD between two sample files");
  struct {
    std::string kernel = "rq", x, y, sigmas, alphas;
    double beta = 0.0;
    bool biased = false;
    std::size_t block = 0, reps = 100;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool have_seed = false;
  } mmd_opt;
  mmd_cmd->add_option("--kernel", mmd_opt.kernel, "Kernel spec, e.g. rq:0.2,0.5,1,2,5");
  mmd_cmd->add_option("--x", mmd_opt.x, "First sample file (.csv or .fmat)")->required();
  mmd_cmd->add_option("--y", mmd_opt.y, "Second sample file")->required();
  mmd_cmd->add_option("--sigmas", mmd_opt.sigmas, "Override rbf lengthscales");
  mmd_cmd->add_option("--alphas", mmd_opt.alphas, "Override rq shape parameters");
  mmd_cmd->add_option("--beta", mmd_opt.beta, "Override dist kernel beta");
  mmd_cmd->add_flag("--biased", mmd_opt.biased, "V-statistic instead of the unbiased estimator");
  mmd_cmd->add_option("--block", mmd_opt.block, "Block size for subsampled averaging (0 = full)");
  mmd_cmd->add_option("--reps", mmd_opt.reps, "Repetitions for block averaging");
  auto* mmd_seed = mmd_cmd->add_option("--seed", mmd_opt.seed, "RNG seed (required with --block)");
  mmd_cmd->add_option("--threads", mmd_opt.threads, "Worker cap (does not change results)");
  mmd_cmd->callback([&] {
    mmd_opt.have_seed = mmd_seed->count() > 0;
    const kmet::Matrix x = kmet::load_features(mmd_opt.x);
    const kmet::Matrix y = kmet::load_features(mmd_opt.y);
    const kmet::KernelSpec spec = kmet::finalize_kernel(
        build_kernel(mmd_opt.kernel, mmd_opt.sigmas, mmd_opt.alphas, mmd_opt.beta), x.cols());
    Report r;
    r.command = "mmd";
    r.params = {{"kernel", mmd_opt.kernel}, {"x", mmd_opt.x},         {"y", mmd_opt.y},
                {"biased", mmd_opt.biased}, {"block", mmd_opt.block}, {"reps", mmd_opt.reps},
                {"threads", mmd_opt.threads}};
    kmet::Estimate est;
    if (mmd_opt.block > 0) {
      if (!mmd_opt.have_seed)
        kmet::fail(kmet::ErrorCode::invalid_input, "mmd --block requires --seed");
      if (mmd_opt.biased)
        kmet::fail(kmet::ErrorCode::invalid_input, "mmd --block is incompatible with --biased");
      kmet::RngState rng = kmet::RngState::seeded(mmd_opt.seed);
      est = kmet::mmd2_block_average(spec, x, y, mmd_opt.block, mmd_opt.reps, rng,
                                     mmd_opt.threads);
      r.params["seed"] = mmd_opt.seed;
    } else {
      est = mmd_opt.biased ? kmet::mmd2_biased(spec, x, y) : kmet::mmd2_unbiased(spec, x, y);
    }
    r.result = estimate_json(est);
    emit(r);
  });

  // ---- kid -----------------------------------------------------------------
  auto* kid_cmd = app.add_subcommand("kid", "Kernel Inception Distance (block-averaged)");
  struct {
    std::string x, y;
    std::size_t block = 1000, reps = 100;
    std::uint64_t seed = 0;
    unsigned threads = 1;
  } kid_opt;
  kid_cmd->add_option("--x", kid_opt.x)->required();
  kid_cmd->add_option("--y", kid_opt.y)->required();
  kid_cmd->add_option("--block", kid_opt.block, "Block size (0 or too large clamps to min(m,n))");
  kid_cmd->add_option("--reps", kid_opt.reps, "Number of blocks averaged");
  kid_cmd->add_option("--seed", kid_opt.seed, "RNG seed")->required();
  kid_cmd->add_option("--threads", kid_opt.threads);
  kid_cmd->callback([&] {
    const kmet::Matrix x = kmet::load_features(kid_opt.x);
    const kmet::Matrix y = kmet::load_features(kid_opt.y);
    kmet::RngState rng = kmet::RngState::seeded(kid_opt.seed);
    const kmet::Estimate est =
        kmet::kid(x, y, kid_opt.block, kid_opt.reps, rng, kid_opt.threads);
    Report r;
    r.command = "kid";
    r.params = {{"x", kid_opt.x},       {"y", kid_opt.y},          {"block", kid_opt.block},
                {"reps", kid_opt.reps}, {"seed", kid_opt.seed},    {"threads", kid_opt.threads}};
    r.result = estimate_json(est);
    r.result["block_clamped"] = est.block_size && *est.block_size != kid_opt.block;
    emit(r);
  });

  // ---- fid -----------------------------------------------------------------
  auto* fid_cmd = app.add_subcommand("fid", "Frechet distance between fitted Gaussians");
  struct {
    std::string x, y;
    unsigned threads = 1;
  } fid_opt;
  fid_cmd->add_option("--x", fid_opt.x)->required();
  fid_cmd->add_option("--y", fid_opt.y)->required();
  fid_cmd->add_option("--threads", fid_opt.threads, "Worker cap (does not change results)");
  fid_cmd->callback([&] {
    const kmet::Matrix x = kmet::load_features(fid_opt.x);
    const kmet::Matrix y = kmet::load_features(fid_opt.y);
    bool clamped = false;
    const double value = kmet::fid_estimate(x, y, &clamped);
    Report r;
    r.command = "fid";
    r.params = {{"x", fid_opt.x}, {"y", fid_opt.y}};
    r.result = {{"value", value}, {"clamped", clamped}};
    emit(r);
  });

  // ---- inception-score -------------------------------------------------------
  auto* is_cmd = app.add_subcommand("inception-score", "Inception score of class probabilities");
  struct {
    std::string probs;
  } is_opt;
  is_cmd->add_option("--probs", is_opt.probs, "n x C matrix of row distributions")->required();
  is_cmd->callback([&] {
    const kmet::Matrix probs = kmet::load_features(is_opt.probs);
    Report r;
    r.command = "inception-score";
    r.params = {{"probs", is_opt.probs}};
    r.result = {{"value", kmet::inception_score(probs)}};
    emit(r);
  });

  // ---- relative-test ---------------------------------------------------------
  auto* rel_cmd = app.add_subcommand("relative-test", "Three-sample relative similarity test");
  struct {
    std::string candidate, baseline, reference, kernel = "rq", sigmas, alphas;
    double beta = 0.0;
    std::uint64_t seed = 0;
    unsigned threads = 1;
  } rel_opt;
  rel_cmd->add_option("--candidate", rel_opt.candidate)->required();
  rel_cmd->add_option("--baseline", rel_opt.baseline)->required();
  rel_cmd->add_option("--reference", rel_opt.reference)->required();
  rel_cmd->add_option("--kernel", rel_opt.kernel);
  rel_cmd->add_option("--sigmas", rel_opt.sigmas);
  rel_cmd->add_option("--alphas", rel_opt.alphas);
  rel_cmd->add_option("--beta", rel_opt.beta);
  rel_cmd->add_option("--seed", rel_opt.seed, "RNG seed for the alignment shuffle")->required();
  rel_cmd->add_option("--threads", rel_opt.threads);
  rel_cmd->callback([&] {
    const kmet::Matrix xc = kmet::load_features(rel_opt.candidate);
    const kmet::Matrix xb = kmet::load_features(rel_opt.baseline);
    const kmet::Matrix z = kmet::load_features(rel_opt.reference);
    const kmet::KernelSpec spec = kmet::finalize_kernel(
        build_kernel(rel_opt.kernel, rel_opt.sigmas, rel_opt.alphas, rel_opt.beta), z.cols());
    const kmet::TestResult res =
        kmet::relative_similarity_test(spec, xc, xb, z, kmet::RngState::seeded(rel_opt.seed));
    Report r;
    r.command = "relative-test";
    r.params = {{"candidate", rel_opt.candidate}, {"baseline", rel_opt.baseline},
                {"reference", rel_opt.reference}, {"kernel", rel_opt.kernel},
                {"seed", rel_opt.seed},           {"threads", rel_opt.threads}};
    r.result = {{"statistic", res.statistic},
                {"variance", res.variance},
                {"p_value", res.p_value},
                {"n_used", res.n_used}};
    emit(r);
  });

  // ---- lr-adapt ---------------------------------------------------------------
  auto* lr_cmd = app.add_subcommand(
      "lr-adapt", "Learning-rate controller over a stream of p-values (one per line)");
  struct {
    double lr = 1e-4, alpha = 0.05, decay = 0.5, min_lr = 0.0;
    std::size_t patience = 3;
    std::string input = "-";
  } lr_opt;
  lr_cmd->add_option("--lr", lr_opt.lr, "Initial learning rate");
  lr_cmd->add_option("--alpha", lr_opt.alpha, "Significance level");
  lr_cmd->add_option("--patience", lr_opt.patience, "Consecutive failures before decay");
  lr_cmd->add_option("--decay", lr_opt.decay, "Multiplier applied on decay");
  lr_cmd->add_option("--min-lr", lr_opt.min_lr, "Lower bound for the rate");
  lr_cmd->add_option("--input", lr_opt.input, "File of p-values, '-' for stdin");
  lr_cmd->callback([&] {
    if (!(lr_opt.lr > 0)) kmet::fail(kmet::ErrorCode::invalid_input, "lr-adapt: --lr > 0");
    if (!(lr_opt.alpha > 0 && lr_opt.alpha < 1))
      kmet::fail(kmet::ErrorCode::invalid_input, "lr-adapt: --alpha in (0,1)");
    if (!(lr_opt.decay > 0 && lr_opt.decay < 1))
      kmet::fail(kmet::ErrorCode::invalid_input, "lr-adapt: --decay in (0,1)");
    if (lr_opt.patience < 1)
      kmet::fail(kmet::ErrorCode::invalid_input, "lr-adapt: --patience >= 1");
    std::ifstream file;
    std::istream* in = &std::cin;
    if (lr_opt.input != "-") {
      file.open(lr_opt.input);
      if (!file)
        kmet::fail(kmet::ErrorCode::io_open_failed, "lr-adapt: cannot open " + lr_opt.input);
      in = &file;
    }
    kmet::AdaptationState state{lr_opt.lr, 0,
                                {lr_opt.alpha, lr_opt.patience, lr_opt.decay, lr_opt.min_lr}};
    json steps = json::array();
    std::string line;
    while (std::getline(*in, line)) {
      if (line.empty()) continue;
      double p = 0.0;
      try {
        p = std::stod(line);
      } catch (const std::exception&) {
        kmet::fail(kmet::ErrorCode::invalid_input, "lr-adapt: bad p-value '" + line + "'");
      }
      const auto [next, action] = kmet::lr_controller_step(state, p);
      state = next;
      steps.push_back({{"p", p},
                       {"lr", state.lr},
                       {"action", action == kmet::LrAction::decayed ? "decayed" : "kept"},
                       {"consecutive_failures", state.consecutive_failures}});
    }
    Report r;
    r.command = "lr-adapt";
    r.params = {{"lr", lr_opt.lr},       {"alpha", lr_opt.alpha},   {"patience", lr_opt.patience},
                {"decay", lr_opt.decay}, {"min_lr", lr_opt.min_lr}, {"input", lr_opt.input}};
    r.result = {{"steps", steps}, {"final_lr", state.lr}};
    emit(r);
  });

  // ---- bias-demo ----------------------------------------------------------------
  auto* bias_cmd = app.add_subcommand("bias-demo", "Estimator-bias demonstrations");
  bias_cmd->require_subcommand(1);
  struct {
    std::size_t reps = 100000, m_tr = 2, n_tr = 2, m = 10, d = 16, relu_d = 64, relu_m = 640,
                mc = 200000, est_reps = 3;
    std::string metric = "kid", pair = "same", n_list = "10,100,1000", output = "json";
    std::uint64_t seed = 0;
    unsigned threads = 1;
  } bias_opt;

  const auto emit_bias = [&](const kmet::BiasReport& report, json params) {
    if (bias_opt.output == "csv") {
      print_bias_csv(report);
      return;
    }
    Report r;
    r.command = "bias-demo";
    r.params = std::move(params);
    r.result = bias_report_json(report);
    emit(r);
  };

  auto* was_cmd = bias_cmd->add_subcommand("wasserstein", "Data-splitting Wasserstein bias");
  was_cmd->add_option("--reps", bias_opt.reps);
  was_cmd->add_option("--seed", bias_opt.seed)->required();
  was_cmd->add_option("--threads", bias_opt.threads);
  was_cmd->add_option("--output", bias_opt.output, "json or csv");
  was_cmd->callback([&] {
    kmet::RngState rng = kmet::RngState::seeded(bias_opt.seed);
    emit_bias(kmet::wasserstein_splitting_bias(bias_opt.reps, rng, bias_opt.threads),
              {{"experiment", "wasserstein"},
               {"reps", bias_opt.reps},
               {"seed", bias_opt.seed},
               {"threads", bias_opt.threads}});
  });

  auto* maxmmd_cmd = bias_cmd->add_subcommand("max-mmd", "Data-splitting maximized-MMD bias");
  maxmmd_cmd->add_option("--m-tr", bias_opt.m_tr);
  maxmmd_cmd->add_option("--n-tr", bias_opt.n_tr);
  maxmmd_cmd->add_option("--reps", bias_opt.reps);
  maxmmd_cmd->add_option("--seed", bias_opt.seed)->required();
  maxmmd_cmd->add_option("--threads", bias_opt.threads);
  maxmmd_cmd->add_option("--output", bias_opt.output);
  maxmmd_cmd->callback([&] {
    kmet::RngState rng = kmet::RngState::seeded(bias_opt.seed);
    emit_bias(kmet::max_mmd_splitting_bias(bias_opt.m_tr, bias_opt.n_tr, bias_opt.reps, rng,
                                           bias_opt.threads),
              {{"experiment", "max-mmd"},
               {"m_tr", bias_opt.m_tr},
               {"n_tr", bias_opt.n_tr},
               {"reps", bias_opt.reps},
               {"seed", bias_opt.seed},
               {"threads", bias_opt.threads}});
  });

  auto* curves_cmd = bias_cmd->add_subcommand("curves", "KID/FID sampling curves over n");
  curves_cmd->add_option("--metric", bias_opt.metric, "kid or fid");
  curves_cmd->add_option("--pair", bias_opt.pair, "same or shifted");
  curves_cmd->add_option("--d", bias_opt.d);
  curves_cmd->add_option("--n-list", bias_opt.n_list);
  curves_cmd->add_option("--reps", bias_opt.reps);
  curves_cmd->add_option("--seed", bias_opt.seed)->required();
  curves_cmd->add_option("--threads", bias_opt.threads);
  curves_cmd->add_option("--output", bias_opt.output);
  curves_cmd->callback([&] {
    const kmet::CurveMetric metric = [&] {
      if (bias_opt.metric == "kid") return kmet::CurveMetric::kid;
      if (bias_opt.metric == "fid") return kmet::CurveMetric::fid;
      kmet::fail(kmet::ErrorCode::invalid_input, "curves: --metric must be kid or fid");
    }();
    const kmet::DistPair pair = [&] {
      if (bias_opt.pair == "same") return kmet::DistPair::same;
      if (bias_opt.pair == "shifted") return kmet::DistPair::shifted;
      kmet::fail(kmet::ErrorCode::invalid_input, "curves: --pair must be same or shifted");
    }();
    kmet::RngState rng = kmet::RngState::seeded(bias_opt.seed);
    emit_bias(kmet::score_bias_curves(metric, bias_opt.d, pair,
                                      parse_size_list(bias_opt.n_list, "--n-list"),
                                      bias_opt.reps, rng, bias_opt.threads),
              {{"experiment", "curves"},
               {"metric", bias_opt.metric},
               {"pair", bias_opt.pair},
               {"d", bias_opt.d},
               {"n_list", bias_opt.n_list},
               {"reps", bias_opt.reps},
               {"seed", bias_opt.seed},
               {"threads", bias_opt.threads}});
  });

  auto* rev1_cmd = bias_cmd->add_subcommand("reversal-1d", "Analytic 1-D FID ordering reversal");
  rev1_cmd->add_option("--m", bias_opt.m);
  rev1_cmd->add_option("--reps", bias_opt.reps);
  rev1_cmd->add_option("--seed", bias_opt.seed)->required();
  rev1_cmd->add_option("--threads", bias_opt.threads);
  rev1_cmd->add_option("--output", bias_opt.output);
  rev1_cmd->callback([&] {
    kmet::RngState rng = kmet::RngState::seeded(bias_opt.seed);
    emit_bias(kmet::fid_ordering_reversal_1d(bias_opt.m, bias_opt.reps, rng, bias_opt.threads),
              {{"experiment", "reversal-1d"},
               {"m", bias_opt.m},
               {"reps", bias_opt.reps},
               {"seed", bias_opt.seed},
               {"threads", bias_opt.threads}});
  });

  auto* revr_cmd =
      bias_cmd->add_subcommand("reversal-relu", "Censored-normal FID comparison at finite m");
  revr_cmd->add_option("--d", bias_opt.relu_d);
  revr_cmd->add_option("--m", bias_opt.relu_m, "Plug-in sample size");
  revr_cmd->add_option("--mc", bias_opt.mc, "MC samples for ground-truth moments");
  revr_cmd->add_option("--est-reps", bias_opt.est_reps);
  revr_cmd->add_option("--seed", bias_opt.seed)->required();
  revr_cmd->add_option("--threads", bias_opt.threads);
  revr_cmd->add_option("--output", bias_opt.output);
  revr_cmd->callback([&] {
    kmet::RngState rng = kmet::RngState::seeded(bias_opt.seed);
    emit_bias(kmet::fid_ordering_reversal_relu(bias_opt.relu_d, bias_opt.relu_m, rng, bias_opt.mc,
                                               bias_opt.est_reps, bias_opt.threads),
              {{"experiment", "reversal-relu"},
               {"d", bias_opt.relu_d},
               {"m", bias_opt.relu_m},
               {"mc", bias_opt.mc},
               {"est_reps", bias_opt.est_reps},
               {"seed", bias_opt.seed},
               {"threads", bias_opt.threads}});
  });

  // ---- gradcheck ------------------------------------------------------------------
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "Finite-difference check of the MMD loss gradient");
  struct {
    std::string layers = "8,16,4", gen_layers, kernel = "rq";
    double epsilon = 1e-5, shift = 0.5;
    std::size_t m = 24, n = 24;
    int retries = 20;
    std::uint64_t seed = 0;
    unsigned threads = 1;
  } grad_opt;
  grad_cmd->add_option("--layers", grad_opt.layers,
                       "Critic sizes: input,width,...,output (e.g. 8,16,4)");
  grad_cmd->add_option("--gen-layers", grad_opt.gen_layers,
                       "Optional generator sizes: noise,width,...,critic-input");
  grad_cmd->add_option("--kernel", grad_opt.kernel);
  grad_cmd->add_option("--epsilon", grad_opt.epsilon, "Central-difference step");
  grad_cmd->add_option("--shift", grad_opt.shift, "Mean offset of the data-side sampler");
  grad_cmd->add_option("--m", grad_opt.m, "Rows per side");
  grad_cmd->add_option("--n", grad_opt.n);
  grad_cmd->add_option("--retries", grad_opt.retries, "Kink-proximity resampling budget");
  grad_cmd->add_option("--seed", grad_opt.seed)->required();
  grad_cmd->add_option("--threads", grad_opt.threads, "Worker cap (does not change results)");
  grad_cmd->callback([&] {
    const auto critic_sizes = parse_size_list(grad_opt.layers, "--layers");
    if (critic_sizes.size() < 2)
      kmet::fail(kmet::ErrorCode::invalid_input, "gradcheck: --layers needs input,output");
    kmet::RngState rng = kmet::RngState::seeded(grad_opt.seed);
    const kmet::NetSpec critic = kmet::make_mlp(
        critic_sizes[0], {critic_sizes.begin() + 1, critic_sizes.end()}, rng);
    std::optional<kmet::NetSpec> generator;
    std::size_t noise_dim = critic_sizes[0];
    if (!grad_opt.gen_layers.empty()) {
      const auto gen_sizes = parse_size_list(grad_opt.gen_layers, "--gen-layers");
      if (gen_sizes.size() < 2 || gen_sizes.back() != critic_sizes[0])
        kmet::fail(kmet::ErrorCode::invalid_input,
                   "gradcheck: --gen-layers must end at the critic input size");
      generator = kmet::make_mlp(gen_sizes[0], {gen_sizes.begin() + 1, gen_sizes.end()}, rng);
      noise_dim = gen_sizes[0];
    }
    const kmet::KernelSpec spec = kmet::finalize_kernel(
        build_kernel(grad_opt.kernel, "", "", 0.0), critic_sizes.back());
    kmet::GaussianSampler px{std::vector<double>(critic_sizes[0], grad_opt.shift), 1.0};
    kmet::GaussianSampler pz{std::vector<double>(noise_dim, 0.0), 1.0};
    const kmet::GradReport report = kmet::finite_diff_check_sampled(
        critic, generator ? &*generator : nullptr, spec, px, pz, grad_opt.m, grad_opt.n, rng,
        grad_opt.epsilon, grad_opt.retries);
    Report r;
    r.command = "gradcheck";
    r.params = {{"layers", grad_opt.layers},   {"gen_layers", grad_opt.gen_layers},
                {"kernel", grad_opt.kernel},   {"epsilon", grad_opt.epsilon},
                {"m", grad_opt.m},             {"n", grad_opt.n},
                {"shift", grad_opt.shift},     {"seed", grad_opt.seed}};
    r.result = grad_report_json(report);
    emit(r);
  });

  // ---- convert ---------------------------------------------------------------------
  auto* conv_cmd = app.add_subcommand("convert", "Convert between csv and fmat");
  struct {
    std::string in, out, to;
  } conv_opt;
  conv_cmd->add_option("--in", conv_opt.in)->required();
  conv_cmd->add_option("--out", conv_opt.out)->required();
  conv_cmd->add_option("--to", conv_opt.to, "csv or fmat (default: by extension)");
  conv_cmd->callback([&] {
    const kmet::Matrix m = kmet::load_features(conv_opt.in);
    kmet::FileFormat fmt = kmet::FileFormat::auto_detect;
    if (conv_opt.to == "csv")
      fmt = kmet::FileFormat::csv;
    else if (conv_opt.to == "fmat")
      fmt = kmet::FileFormat::fmat;
    else if (!conv_opt.to.empty())
      kmet::fail(kmet::ErrorCode::invalid_input, "convert: --to must be csv or fmat");
    kmet::save_features(m, conv_opt.out, fmt);
    Report r;
    r.command = "convert";
    r.params = {{"in", conv_opt.in}, {"out", conv_opt.out}, {"to", conv_opt.to}};
    r.result = {{"rows", m.rows()}, {"cols", m.cols()}};
    emit(r);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  } catch (const kmet::Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return e.is_numerical() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
