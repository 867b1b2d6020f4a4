// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "gallop/feature_store.hpp"
#include "gallop/gallop_head.hpp"
#include "gallop/inference.hpp"
#include "gallop/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gallop;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// Runs a criterion; an exception counts as FAIL.
void criterion(const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(false, name, std::string("exception: ") + e.what());
  }
}

std::size_t correct(const GallopModel& model, const FeatureDataset& ds, Branch branch) {
  return static_cast<std::size_t>(std::llround(top1_accuracy(model, ds, branch) * double(ds.records.size())));
}

// Noisy benchmark shared by the ablations: 4 classes, 2 planted + 30 noise
// patches, sigma 0.15.
SynthSpec bench_spec(std::uint64_t seed) {
  SynthSpec s;
  s.num_classes = 4;
  s.shots_per_class = 16;
  s.d = 16;
  s.L = 32;
  s.planted_patches_per_image = 2;
  s.noise_sigma = 0.15;
  s.test_shots_per_class = 250;
  s.seed = seed;
  return s;
}

TrainConfig bench_config(std::uint64_t seed) {
  TrainConfig c;
  c.batch_size = 16;
  c.lr = 0.005;
  c.epochs = 100;
  c.seed = seed;
  return c;
}

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

void gradient_integrity() {
  const auto t0 = Clock::now();
  SynthSpec s;
  s.num_classes = 3;
  s.d = 16;
  s.L = 8;
  s.shots_per_class = 4;
  s.noise_sigma = 0.1;
  s.seed = 3;
  const auto data = generate_synthetic(s);
  TrainConfig c;
  c.global_prompts = 2;
  c.local_prompts = 2;
  c.k1 = 2;
  c.delta_k = 2;
  c.lambda_div = 0.1;
  c.dropout.rate = 0.5;
  c.dropout.apply_to_local = true;
  c.epochs = 5;
  c.batch_size = 4;
  c.lr = 0.01;

  // Check at initialization and again after a few epochs of training.
  const GallopModel models[] = {init_model(c, data.train), train(data.train, c).model};
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  bool ok = true;
  const Batch batch = full_batch(data.train);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto gmask = sample_dropout(c.dropout, batch.size(), 2, 11 + i, 0);
    const auto lmask = sample_dropout(c.dropout, batch.size(), 2, 17 + i, 0);
    LossOptions loss;
    loss.global_mask = &gmask;
    loss.local_mask = &lmask;
    loss.lambda_div = c.lambda_div;
    GradCheckOptions opts;
    opts.coords_per_group = 50;
    opts.step = 1e-5;
    opts.tolerance = 1e-4;
    opts.seed = 100 + i;
    const auto r = gradient_check(models[i], batch, loss, opts);
    for (const auto& g : r.groups) {
      checked += g.checked;
      skipped += g.skipped;
      ok = ok && g.checked == 50;
    }
    ok = ok && r.passed;
    worst = std::max(worst, r.max_rel_error);
  }
  const double secs = seconds_since(t0);
  ok = ok && worst < 1e-4 && secs < 30.0;
  report(ok, "gradient_integrity",
         fmt("max_rel_error %.3e (< 1e-4), %zu coordinates checked, %zu resampled, %.2fs (< 30s)", worst, checked,
             skipped, secs));
}

void identity_reduction() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng() % 6, d = 2 + rng() % 15, L = 1 + rng() % 40;
    const auto k = static_cast<std::uint32_t>(1 + rng() % L);
    ModelShape shape;
    shape.num_classes = C;
    shape.feature_dim = d;
    shape.global_prompts = 1;
    shape.local_prompts = 1;
    shape.token_dim = 8;
    shape.prompt_seed = rng();
    shape.encoder_seed = rng();
    shape.scales = {k, 0, 1};
    shape.tau = std::vector<double>{0.01, 0.05, 1.0}[trial % 3];
    const auto model = make_model(shape);
    std::vector<float> z;
    for (std::size_t i = 0; i < L; ++i) {
      const auto row = gallop::testing::random_unit(rng, d);
      z.insert(z.end(), row.begin(), row.end());
    }
    // Global-style pooling on the raw locals, then the softmax.
    const Matrix text = encode_classes(*model.encoder, model.prompts.local[0], model.class_tokens);
    const Matrix raw = locals_matrix(z, L, d);
    std::vector<double> sims(C);
    for (std::size_t c = 0; c < C; ++c) sims[c] = topk_similarity(raw, text.row(c), k);
    const auto want = class_probabilities(sims, model.tau);
    const auto got = local_class_probability(model, z, L, 0);
    for (std::size_t c = 0; c < C; ++c) worst = std::max(worst, std::abs(got[c] - want[c]));
  }
  report(worst <= 1e-12, "identity_reduction", fmt("100 instances, max abs diff %.3e (<= 1e-12)", worst));
}

void topk_oracle() {
  std::mt19937_64 rng(77);
  std::size_t mismatches = 0, tied = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t L = 1 + rng() % 64, d = 1 + rng() % 8;
    Matrix z = gallop::testing::random_matrix(rng, L, d);
    const auto t = gallop::testing::random_unit(rng, d);
    if (trial % 2 == 0 && L > 1) {
      // engineered ties: copy some rows onto others so similarities coincide exactly
      const std::size_t copies = 1 + rng() % L;
      for (std::size_t i = 0; i < copies; ++i) {
        const std::size_t from = rng() % L, to = rng() % L;
        for (std::size_t k = 0; k < d; ++k) z(to, k) = z(from, k);
      }
      ++tied;
    }
    const std::size_t k = 1 + rng() % L;
    std::vector<double> sims(L);
    for (std::size_t i = 0; i < L; ++i) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a) s += z(i, a) * t[a];
      sims[i] = s;
    }
    const auto idx = gallop::testing::sorted_topk(sims, k);
    std::vector<std::uint8_t> mask(L, 0);
    double sum = 0.0;
    for (auto i : idx) {
      mask[i] = 1;
      sum += sims[i];
    }
    const double want = sum / double(k);
    if (topk_mask(z, t, k) != mask || topk_similarity(z, t, k) != want) ++mismatches;
  }
  report(mismatches == 0, "topk_oracle",
         fmt("1000 instances (%zu with engineered ties), %zu mismatches", tied, mismatches));
}

void sparsity_ablation() {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  double total = 0.0;
  for (auto seed : kSeeds) {
    const auto data = generate_synthetic(bench_spec(seed));
    auto sparse = bench_config(seed);
    sparse.local_prompts = 1;
    sparse.k1 = 2;
    sparse.delta_k = 0;
    auto dense = sparse;
    dense.k1 = data.train.L;
    const double a = top1_accuracy(train(data.train, sparse).model, data.test_id, Branch::kLocal);
    const double b = top1_accuracy(train(data.train, dense).model, data.test_id, Branch::kLocal);
    const double gap = 100.0 * (a - b);
    total += gap;
    ok = ok && gap >= 10.0;
    detail += fmt("seed %llu k=2 %.1f%% k=L %.1f%% (%+.1f); ", (unsigned long long)seed, 100 * a, 100 * b, gap);
  }
  const double secs = seconds_since(t0);
  ok = ok && total / 3.0 >= 10.0 && secs < 120.0;
  report(ok, "sparsity_ablation", detail + fmt("mean %+.1f points (>= +10), %.1fs (< 120s)", total / 3.0, secs));
}

void complementarity() {
  std::string detail;
  bool ok = true;
  for (auto seed : kSeeds) {
    const auto data = generate_synthetic(bench_spec(seed));
    const auto model = train(data.train, bench_config(seed)).model;
    const auto n = data.test_id.records.size();
    const auto both = correct(model, data.test_id, Branch::kBoth);
    const auto best = std::max(correct(model, data.test_id, Branch::kGlobal), correct(model, data.test_id, Branch::kLocal));
    // both/n - best/n >= -0.005, in counts
    ok = ok && 200 * (double(both) - double(best)) >= -double(n);
    detail += fmt("seed %llu both %.1f%% best single %.1f%% (%+.1f); ", (unsigned long long)seed, 100.0 * both / n,
                  100.0 * best / n, 100.0 * (double(both) - double(best)) / n);
  }
  report(ok, "complementarity", detail + "tolerance -0.5 points");
}

void dropout_effect() {
  std::string detail;
  bool ok = true;
  for (auto seed : kSeeds) {
    const auto data = generate_synthetic(bench_spec(seed));
    auto with = bench_config(seed);
    with.global_prompts = 4;
    with.dropout.rate = 0.75;
    auto without = with;
    without.dropout.rate = 0.0;
    const auto n = data.test_id.records.size();
    const auto a = correct(train(data.train, with).model, data.test_id, Branch::kGlobal);
    const auto b = correct(train(data.train, without).model, data.test_id, Branch::kGlobal);
    ok = ok && 200 * (double(a) - double(b)) >= -double(n);
    detail += fmt("seed %llu rate .75 %.1f%% rate 0 %.1f%% (%+.1f); ", (unsigned long long)seed, 100.0 * a / n,
                  100.0 * b / n, 100.0 * (double(a) - double(b)) / n);
  }
  report(ok, "dropout_effect", detail + "tolerance -0.5 points");
}

void metric_oracles() {
  std::mt19937_64 rng(5150);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 500, m = 1 + rng() % 500;
    std::vector<double> id(n), ood(m);
    std::normal_distribution<double> fine;
    std::uniform_int_distribution<int> coarse(0, 12);
    const bool ties = trial % 2 == 1;
    for (auto& x : id) x = ties ? coarse(rng) / 4.0 : fine(rng) + 0.8;
    for (auto& x : ood) x = ties ? coarse(rng) / 4.0 : fine(rng);
    if (fpr_at_95_tpr(id, ood) != gallop::testing::sweep_fpr95(id, ood)) ++mismatches;
    if (auroc(id, ood) != gallop::testing::pair_count_auroc(id, ood)) ++mismatches;
  }
  const std::vector<double> hi{0.6, 0.9, 0.7}, lo{0.1, 0.5, 0.2, 0.3};
  const double perfect = auroc(hi, lo);
  const double flat = auroc(std::vector<double>(5, 0.4), std::vector<double>(8, 0.4));
  report(mismatches == 0 && perfect == 1.0 && flat == 0.5, "metric_oracles",
         fmt("200 score sets, %zu mismatches; separated auroc %.3f, all-ties auroc %.3f", mismatches, perfect, flat));
}

void glmcm_direction() {
  auto spec = bench_spec(0);
  spec.noise_sigma = 0.0;
  const auto data = generate_synthetic(spec);
  const auto model = train(data.train, bench_config(0)).model;
  const auto id = score_dataset(model, data.test_id, model.tau);
  const auto ood = score_dataset(model, data.test_ood, model.tau);
  std::vector<double> a, b, ga, gb;
  for (const auto& s : id) {
    a.push_back(s.s_glmcm);
    ga.push_back(s.s_gmcm);
  }
  for (const auto& s : ood) {
    b.push_back(s.s_glmcm);
    gb.push_back(s.s_gmcm);
  }
  const double gl = auroc(a, b), g = auroc(ga, gb);
  report(gl >= g && gl > 0.9 && g > 0.9, "glmcm_direction",
         fmt("seed 0, AUROC GL-MCM %.4f vs MCM %.4f (GL >= MCM, both > 0.9)", gl, g));
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int sh(const std::string& cmd) { return std::system(cmd.c_str()); }

void determinism() {
  gallop::testing::TempDir tmp("accept");
  const std::string dir = tmp.path().string();
  const std::string cli = std::string("'") + GALLOP_CLI_PATH + "'";
  {
    std::ofstream(tmp / "spec.json") << R"({"noise_sigma": 0.15, "planted_patches_per_image": 2})";
    std::ofstream(tmp / "cfg.json") << R"({"epochs": 10, "batch_size": 16, "lambda_div": 0.1})";
  }
  const std::string quiet = " > /dev/null 2>&1";
  bool ran = sh("cd '" + dir + "' && " + cli + " synth --spec spec.json --out-dir data" + quiet) == 0;
  ran = ran && sh("cd '" + dir + "' && " + cli + " train --config cfg.json --data data --out a.ckpt" + quiet) == 0;
  ran = ran && sh("cd '" + dir + "' && " + cli + " --threads 4 train --config cfg.json --data data --out b.ckpt" + quiet) == 0;
  const auto ca = slurp(tmp / "a.ckpt"), cb = slurp(tmp / "b.ckpt");
  const auto ta = slurp(tmp / "a.ckpt.trace.jsonl"), tb = slurp(tmp / "b.ckpt.trace.jsonl");
  const bool ok = ran && !ca.empty() && !ta.empty() && ca == cb && ta == tb;
  report(ok, "determinism",
         fmt("two CLI train runs (1 and 4 threads): checkpoint %zu bytes %s, trace %zu bytes %s", ca.size(),
             ca == cb ? "identical" : "DIFFERENT", ta.size(), ta == tb ? "identical" : "DIFFERENT") +
             (ran ? "" : " (a CLI step failed)"));
}

void separable_convergence() {
  std::string detail;
  bool ok = true;
  double worst_secs = 0.0;
  SynthSpec spec;
  spec.num_classes = 4;
  spec.shots_per_class = 16;
  spec.noise_sigma = 0.0;
  for (auto seed : kSeeds) {
    spec.seed = seed;
    const auto data = generate_synthetic(spec);
    TrainConfig c;
    c.epochs = 30;
    c.seed = seed;
    const auto t0 = Clock::now();
    const auto result = train(data.train, c);
    const double secs = seconds_since(t0);
    worst_secs = std::max(worst_secs, secs);
    const double acc = top1_accuracy(result.model, data.train);
    ok = ok && acc == 1.0 && secs < 60.0;
    detail += fmt("seed %llu %.1f%%; ", (unsigned long long)seed, 100 * acc);
  }
  report(ok, "separable_convergence", detail + fmt("slowest run %.2fs (< 60s)", worst_secs));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  criterion("gradient_integrity", gradient_integrity);
  criterion("identity_reduction", identity_reduction);
  criterion("topk_oracle", topk_oracle);
  criterion("sparsity_ablation", sparsity_ablation);
  criterion("complementarity", complementarity);
  criterion("dropout_effect", dropout_effect);
  criterion("metric_oracles", metric_oracles);
  criterion("glmcm_direction", glmcm_direction);
  criterion("determinism", determinism);
  criterion("separable_convergence", separable_convergence);
  std::printf("%d failed, total %.1fs\n", failures, seconds_since(t0));
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
