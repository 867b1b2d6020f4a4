#include "gallop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "json.hpp"

#include "gallop/error.hpp"
#include "gallop/inference.hpp"
#include "parallel.hpp"

namespace gallop {

namespace {

// Stream tags for the seeded RNGs used during training.
constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kGlobalDropoutStream = 0x4744;
constexpr std::uint64_t kLocalDropoutStream = 0x4c44;
constexpr std::uint64_t kGradCheckStream = 0x4743;

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{seed & 0xFFFFFFFFu, seed >> 32, stream, index & 0xFFFFFFFFu, index >> 32};
  return std::mt19937_64(seq);
}

std::size_t patch_count(const GallopModel& model, const FeatureRecord& record) {
  const std::size_t d = model.feature_dim();
  if (record.global.size() != d || record.locals.empty() || record.locals.size() % d != 0) {
    fail(ErrorCode::kShape, "record dimensions do not match model feature dimension " + std::to_string(d));
  }
  if (record.label >= model.num_classes()) fail(ErrorCode::kData, "record label exceeds model class count");
  return record.locals.size() / d;
}

void check_mask(const PromptMask* mask, std::size_t rows, std::size_t cols, const char* what) {
  if (mask && (mask->rows != rows || mask->cols != cols || mask->keep.size() != rows * cols)) {
    fail(ErrorCode::kShape, std::string(what) + " mask must be batch x prompts");
  }
}

std::vector<double> inverse_counts(const PromptMask* mask, std::size_t rows, std::size_t cols) {
  std::vector<double> w(cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) {
    const std::size_t c = mask ? mask->column_count(i) : rows;
    w[i] = c == 0 ? 0.0 : 1.0 / static_cast<double>(c);
  }
  return w;
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

Batch full_batch(const FeatureDataset& dataset) {
  Batch b;
  b.reserve(dataset.records.size());
  for (const auto& r : dataset.records) b.push_back(&r);
  return b;
}

std::size_t PromptMask::column_count(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < rows; ++b) n += kept(b, i);
  return n;
}

PromptMask sample_dropout(const DropoutPolicy& policy, std::size_t batch_size, std::size_t m, std::uint64_t seed,
                          std::uint64_t step) {
  PromptMask mask{batch_size, m, std::vector<std::uint8_t>(batch_size * m, 0)};
  if (m == 0) return mask;
  const std::size_t keep = policy.keep_count(m);
  if (keep >= m) return PromptMask::all(batch_size, m);
  auto rng = stream_rng(seed, kGlobalDropoutStream, step);
  std::vector<std::size_t> order(m);
  for (std::size_t b = 0; b < batch_size; ++b) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < keep; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, m - 1);
      std::swap(order[i], order[pick(rng)]);
      mask.keep[b * m + order[i]] = 1;
    }
  }
  return mask;
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) fail(ErrorCode::kArgument, "label out of range");
  return -std::log(probs[label]);
}

double cross_entropy_from_similarities(std::span<const double> sims, double tau, std::size_t label) {
  if (label >= sims.size()) fail(ErrorCode::kArgument, "label out of range");
  return -class_log_probabilities(sims, tau)[label];
}

double diversity_from_encodings(std::span<const std::vector<double>> t) {
  const std::size_t n = t.size();
  if (n < 2) fail(ErrorCode::kArgument, "diversity loss needs at least two prompts");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) s += std::abs(dot(std::span<const double>(t[i]), std::span<const double>(t[j])));
  }
  return s / static_cast<double>(n * (n - 1));
}

namespace {

std::vector<std::vector<double>> free_encodings(const GallopModel& model) {
  const Matrix no_class(0, model.encoder->token_dim());
  std::vector<std::vector<double>> out;
  for (const auto& p : model.prompts.global) out.push_back(model.encoder->encode(p, no_class));
  for (const auto& p : model.prompts.local) out.push_back(model.encoder->encode(p, no_class));
  return out;
}

}  // namespace

double diversity_loss(const GallopModel& model) {
  model.validate();
  return diversity_from_encodings(free_encodings(model));
}

LossEvaluation record_loss(const GallopModel& model, const Batch& batch, const LossOptions& options) {
  model.validate();
  const std::size_t B = batch.size();
  const std::size_t m = model.prompts.global.size();
  const std::size_t n = model.prompts.local.size();
  const std::size_t C = model.num_classes();
  const std::size_t d = model.feature_dim();
  const double tau = model.tau;
  if (B == 0) fail(ErrorCode::kArgument, "empty batch");
  check_mask(options.global_mask, B, m, "global");
  check_mask(options.local_mask, B, n, "local");
  for (const auto* r : batch) model.scales.check_fits(patch_count(model, *r));

  LossEvaluation ev;
  GradientTape& tape = ev.tape;
  tape.tau = tau;
  tape.lambda_div = options.lambda_div;
  tape.text = compute_text_features(model);
  tape.global_weight = inverse_counts(options.global_mask, B, m);
  tape.local_weight = inverse_counts(options.local_mask, B, n);
  tape.records.resize(B);

  // Per-record CE, indexed [b * prompts + i]; NaN marks a dropped prompt.
  std::vector<double> ce_global(B * m, std::nan(""));
  std::vector<double> ce_local(B * n, std::nan(""));

  detail::parallel_for(B, options.threads, [&](std::size_t b) {
    const FeatureRecord& rec = *batch[b];
    auto& trace = tape.records[b];
    trace.record = &rec;
    trace.global_probs.resize(m);
    std::vector<double> sims(C);
    for (std::size_t i = 0; i < m; ++i) {
      if (options.global_mask && !options.global_mask->kept(b, i)) continue;
      for (std::size_t c = 0; c < C; ++c) sims[c] = dot(std::span<const float>(rec.global), tape.text.global[i].row(c));
      trace.global_probs[i] = class_probabilities(sims, tau);
      ce_global[b * m + i] = cross_entropy_from_similarities(sims, tau, rec.label);
    }
    if (n == 0) return;
    const std::size_t L = rec.locals.size() / d;
    trace.aligned = align_locals(model.alignment, rec.locals, L, d);
    trace.local.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (options.local_mask && !options.local_mask->kept(b, j)) continue;
      const std::size_t k = model.scales.k(j);
      auto& choice = trace.local[j];
      choice.rows.resize(C);
      for (std::size_t c = 0; c < C; ++c) {
        const auto patch = patch_similarities(trace.aligned, tape.text.local[j].row(c));
        choice.rows[c] = topk_indices(patch, k);
        double s = 0.0;
        for (auto row : choice.rows[c]) s += patch[row];
        sims[c] = s / static_cast<double>(k);
      }
      choice.probs = class_probabilities(sims, tau);
      ce_local[b * n + j] = cross_entropy_from_similarities(sims, tau, rec.label);
    }
  });

  auto reduce = [B](const std::vector<double>& ce, std::size_t prompts, const std::vector<double>& weight) {
    double total = 0.0;
    for (std::size_t i = 0; i < prompts; ++i) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double v = ce[b * prompts + i];
        if (!std::isnan(v)) s += v;
      }
      total += s * weight[i];
    }
    return total;
  };
  ev.terms.global = reduce(ce_global, m, tape.global_weight);
  ev.terms.multiscale = reduce(ce_local, n, tape.local_weight);
  if (options.lambda_div > 0.0) {
    tape.free_text = free_encodings(model);
    ev.terms.diversity = diversity_from_encodings(tape.free_text);
  }
  ev.terms.total = ev.terms.global + ev.terms.multiscale + options.lambda_div * ev.terms.diversity;
  return ev;
}

LossTerms evaluate_loss(const GallopModel& model, const Batch& batch, const LossOptions& options) {
  return record_loss(model, batch, options).terms;
}

double global_loss(const GallopModel& model, const Batch& batch, const PromptMask& mask) {
  LossOptions o;
  o.global_mask = &mask;
  return evaluate_loss(model, batch, o).global;
}

double multiscale_loss(const GallopModel& model, const Batch& batch) {
  return evaluate_loss(model, batch, {}).multiscale;
}

double total_loss(const GallopModel& model, const Batch& batch, const PromptMask& mask, double lambda_div) {
  LossOptions o;
  o.global_mask = &mask;
  o.lambda_div = lambda_div;
  return evaluate_loss(model, batch, o).total;
}

Gradients backward(const GallopModel& model, const GradientTape& tape, std::size_t threads) {
  const std::size_t m = model.prompts.global.size();
  const std::size_t n = model.prompts.local.size();
  const std::size_t C = model.num_classes();
  const std::size_t d = model.feature_dim();
  const double tau = tape.tau;

  // Per-record partial gradients w.r.t. class text features and theta,
  // reduced in record order below.
  struct Partial {
    std::vector<Matrix> text_global;
    std::vector<Matrix> text_local;
    Matrix theta;
  };
  std::vector<Partial> partials(tape.records.size());

  detail::parallel_for(tape.records.size(), threads, [&](std::size_t b) {
    const auto& trace = tape.records[b];
    const FeatureRecord& rec = *trace.record;
    Partial& part = partials[b];
    part.text_global.assign(m, Matrix(C, d));
    for (std::size_t i = 0; i < m; ++i) {
      const auto& p = trace.global_probs[i];
      if (p.empty()) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const double g = tape.global_weight[i] * (p[c] - (c == rec.label ? 1.0 : 0.0)) / tau;
        axpy(g, std::span<const float>(rec.global), part.text_global[i].row(c));
      }
    }
    if (n == 0) return;
    part.text_local.assign(n, Matrix(C, d));
    Matrix grad_aligned(trace.aligned.rows(), d);
    for (std::size_t j = 0; j < n; ++j) {
      const auto& choice = trace.local[j];
      if (choice.probs.empty()) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const auto& rows = choice.rows[c];
        const double g = tape.local_weight[j] * (choice.probs[c] - (c == rec.label ? 1.0 : 0.0)) / tau;
        const double per_row = g / static_cast<double>(rows.size());
        const auto text = tape.text.local[j].row(c);
        for (auto r : rows) {
          axpy(per_row, trace.aligned.row(r), part.text_local[j].row(c));
          axpy(per_row, text, grad_aligned.row(r));
        }
      }
    }
    // aligned_r = theta z_r  =>  dtheta += grad_aligned_r z_r^T
    part.theta = Matrix(d, d);
    for (std::size_t r = 0; r < grad_aligned.rows(); ++r) {
      const auto z = rec.local_row(r, d);
      const auto g = grad_aligned.row(r);
      for (std::size_t a = 0; a < d; ++a) {
        if (g[a] == 0.0) continue;
        axpy(g[a], z, part.theta.row(a));
      }
    }
  });

  std::vector<Matrix> text_global(m, Matrix(C, d));
  std::vector<Matrix> text_local(n, Matrix(C, d));
  Gradients grads;
  grads.theta = Matrix(d, d);
  for (const auto& part : partials) {
    for (std::size_t i = 0; i < m; ++i) axpy(1.0, part.text_global[i].flat(), text_global[i].flat());
    if (n == 0) continue;
    for (std::size_t j = 0; j < n; ++j) axpy(1.0, part.text_local[j].flat(), text_local[j].flat());
    axpy(1.0, part.theta.flat(), grads.theta.flat());
  }

  // Diversity term: gradient w.r.t. class-free encodings.
  std::vector<std::vector<double>> free_grad;
  if (tape.lambda_div > 0.0 && !tape.free_text.empty()) {
    const std::size_t N = tape.free_text.size();
    const double coef = tape.lambda_div / static_cast<double>(N * (N - 1));
    free_grad.assign(N, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = i + 1; j < N; ++j) {
        const double s = sign(dot(std::span<const double>(tape.free_text[i]), std::span<const double>(tape.free_text[j])));
        axpy(coef * s, std::span<const double>(tape.free_text[j]), std::span<double>(free_grad[i]));
        axpy(coef * s, std::span<const double>(tape.free_text[i]), std::span<double>(free_grad[j]));
      }
    }
  }

  // Through the frozen encoder to the prompt tokens.
  const Matrix no_class(0, model.encoder->token_dim());
  auto prompt_grad = [&](const Prompt& prompt, const Matrix& text_grad, const std::vector<double>* free) {
    Matrix g(prompt.rows(), prompt.cols());
    for (std::size_t c = 0; c < C; ++c) {
      const auto row = text_grad.row(c);
      if (std::all_of(row.begin(), row.end(), [](double x) { return x == 0.0; })) continue;
      axpy(1.0, model.encoder->encode_vjp(prompt, model.class_tokens[c], row).flat(), g.flat());
    }
    if (free) axpy(1.0, model.encoder->encode_vjp(prompt, no_class, *free).flat(), g.flat());
    return g;
  };
  grads.global.resize(m);
  grads.local.resize(n);
  detail::parallel_for(m + n, threads, [&](std::size_t q) {
    const std::vector<double>* free = free_grad.empty() ? nullptr : &free_grad[q];
    if (q < m) {
      grads.global[q] = prompt_grad(model.prompts.global[q], text_global[q], free);
    } else {
      grads.local[q - m] = prompt_grad(model.prompts.local[q - m], text_local[q - m], free);
    }
  });
  return grads;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max) {
  if (total_steps == 0 || step > total_steps) fail(ErrorCode::kArgument, "cosine_lr: step outside [0, total_steps]");
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_max * (1.0 + std::cos(phase)) / 2.0;
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    fail(ErrorCode::kShape, "sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grads[i] + weight_decay * params[i]);
    params[i] -= lr * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(const GallopModel& model, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay), v_theta_(model.alignment.theta.rows(), model.alignment.theta.cols()) {
  for (const auto& p : model.prompts.global) v_global_.emplace_back(p.rows(), p.cols());
  for (const auto& p : model.prompts.local) v_local_.emplace_back(p.rows(), p.cols());
}

void SgdOptimizer::step(GallopModel& model, const Gradients& grads, double lr) {
  if (grads.global.size() != v_global_.size() || grads.local.size() != v_local_.size()) {
    fail(ErrorCode::kShape, "gradient set does not match the optimizer's parameters");
  }
  for (std::size_t i = 0; i < v_global_.size(); ++i) {
    sgd_step(model.prompts.global[i].flat(), grads.global[i].flat(), v_global_[i].flat(), lr, momentum_, weight_decay_);
  }
  for (std::size_t j = 0; j < v_local_.size(); ++j) {
    sgd_step(model.prompts.local[j].flat(), grads.local[j].flat(), v_local_[j].flat(), lr, momentum_, weight_decay_);
  }
  sgd_step(model.alignment.theta.flat(), grads.theta.flat(), v_theta_.flat(), lr, momentum_, weight_decay_);
}

GallopModel init_model(const TrainConfig& config, const FeatureDataset& dataset) {
  config.validate();
  config.scales().check_fits(dataset.L);
  return make_model(model_shape(config, dataset.num_classes, dataset.d));
}

TrainResult train(GallopModel model, const FeatureDataset& dataset, const TrainConfig& config) {
  config.validate();
  model.validate();
  if (dataset.records.empty()) fail(ErrorCode::kArgument, "training set is empty");
  if (dataset.d != model.feature_dim()) fail(ErrorCode::kConfig, "dataset d differs from model feature dimension");
  if (dataset.num_classes != model.num_classes()) fail(ErrorCode::kConfig, "dataset class count differs from model");
  model.scales.check_fits(dataset.L);

  const std::size_t N = dataset.records.size();
  const std::size_t steps_per_epoch = (N + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = config.epochs * steps_per_epoch;
  const std::size_t m = model.prompts.global.size();
  const std::size_t n = model.prompts.local.size();

  SgdOptimizer optimizer(model, config.momentum, config.weight_decay);
  TrainResult result;
  std::vector<std::size_t> order(N);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = stream_rng(config.seed, kShuffleStream, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = cosine_lr(step, total_steps, config.lr);
    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const std::size_t stop = std::min(N, start + config.batch_size);
      Batch batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&dataset.records[order[i]]);

      const PromptMask gmask = sample_dropout(config.dropout, batch.size(), m, config.seed, step);
      PromptMask lmask;
      LossOptions opts;
      opts.global_mask = &gmask;
      opts.lambda_div = config.lambda_div;
      opts.threads = config.threads;
      if (config.dropout.apply_to_local && n > 0) {
        lmask = sample_dropout(config.dropout, batch.size(), n, config.seed ^ kLocalDropoutStream, step);
        opts.local_mask = &lmask;
      }
      const auto ev = record_loss(model, batch, opts);
      const auto grads = backward(model, ev.tape, config.threads);
      optimizer.step(model, grads, cosine_lr(step, total_steps, config.lr));
      ++step;

      const double w = static_cast<double>(batch.size()) / static_cast<double>(N);
      stats.loss.global += w * ev.terms.global;
      stats.loss.multiscale += w * ev.terms.multiscale;
      stats.loss.diversity += w * ev.terms.diversity;
      stats.loss.total += w * ev.terms.total;
    }
    stats.train_top1 = top1_accuracy(model, dataset);
    result.trace.push_back(stats);
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(const FeatureDataset& dataset, const TrainConfig& config) {
  return train(init_model(config, dataset), dataset, config);
}

std::string trace_to_jsonl(const std::vector<EpochStats>& trace) {
  std::string out;
  for (const auto& s : trace) {
    const nlohmann::json j{
        {"epoch", s.epoch},
        {"loss_global", s.loss.global},
        {"loss_multiscale", s.loss.multiscale},
        {"loss_diversity", s.loss.diversity},
        {"loss_total", s.loss.total},
        {"train_top1", s.train_top1},
        {"lr", s.lr},
    };
    out += j.dump();
    out += '\n';
  }
  return out;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

bool same_selection(const GradientTape& a, const GradientTape& b) {
  for (std::size_t r = 0; r < a.records.size(); ++r) {
    const auto& la = a.records[r].local;
    const auto& lb = b.records[r].local;
    for (std::size_t j = 0; j < la.size(); ++j) {
      if (la[j].rows != lb[j].rows) return false;
    }
  }
  return true;
}

}  // namespace

GradCheckReport gradient_check(const GallopModel& model, const Batch& batch, const LossOptions& loss,
                               const GradCheckOptions& options) {
  const auto base = record_loss(model, batch, loss);
  const Gradients grads = backward(model, base.tape, loss.threads);

  // Coordinates are drawn uniformly over the concatenation of a group's tensors.
  auto global_tensors = [](GallopModel& g) {
    std::vector<std::span<double>> v;
    for (auto& p : g.prompts.global) v.push_back(p.flat());
    return v;
  };
  auto local_tensors = [](GallopModel& g) {
    std::vector<std::span<double>> v;
    for (auto& p : g.prompts.local) v.push_back(p.flat());
    return v;
  };
  auto theta_tensors = [](GallopModel& g) { return std::vector<std::span<double>>{g.alignment.theta.flat()}; };

  std::vector<std::span<const double>> ggrad, lgrad, tgrad{grads.theta.flat()};
  for (const auto& g : grads.global) ggrad.push_back(g.flat());
  for (const auto& g : grads.local) lgrad.push_back(g.flat());

  GradCheckReport report;
  auto rng = stream_rng(options.seed, kGradCheckStream, 0);
  GallopModel probe = model;

  auto check_group = [&](const char* name, auto tensors_of, const std::vector<std::span<const double>>& grad_blocks) {
    GradCheckGroup group;
    group.name = name;
    auto tensors = tensors_of(probe);
    std::size_t total = 0;
    for (const auto& t : tensors) total += t.size();
    if (total == 0) {
      report.groups.push_back(group);
      return;
    }
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    const std::size_t max_attempts = 20 * options.coords_per_group;
    for (std::size_t attempt = 0; attempt < max_attempts && group.checked < options.coords_per_group; ++attempt) {
      std::size_t flat = pick(rng);
      std::size_t t = 0;
      while (flat >= tensors[t].size()) flat -= tensors[t++].size();
      double& x = tensors[t][flat];
      const double saved = x;
      x = saved + options.step;
      const auto plus = record_loss(probe, batch, loss);
      x = saved - options.step;
      const auto minus = record_loss(probe, batch, loss);
      x = saved;
      if (!same_selection(base.tape, plus.tape) || !same_selection(base.tape, minus.tape)) {
        ++group.skipped;
        continue;
      }
      const double numeric = (plus.terms.total - minus.terms.total) / (2.0 * options.step);
      const double err = relative_error(grad_blocks[t][flat], numeric);
      group.max_rel_error = std::max(group.max_rel_error, err);
      ++group.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(group);
  };

  check_group("global_prompts", global_tensors, ggrad);
  check_group("local_prompts", local_tensors, lgrad);
  check_group("theta", theta_tensors, tgrad);

  // A group that could not place enough coordinates off tie boundaries fails.
  report.passed = report.max_rel_error < options.tolerance;
  for (const auto& g : report.groups) {
    const bool empty_group = g.name == "local_prompts" && model.prompts.local.empty();
    if (!empty_group && g.checked < options.coords_per_group) report.passed = false;
  }
  return report;
}

}  // namespace gallop
