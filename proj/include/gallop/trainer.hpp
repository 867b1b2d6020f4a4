#ifndef GALLOP_TRAINER_HPP
#define GALLOP_TRAINER_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gallop/config.hpp"
#include "gallop/feature_store.hpp"
#include "gallop/model.hpp"

namespace gallop {

using Batch = std::vector<const FeatureRecord*>;

Batch full_batch(const FeatureDataset& dataset);

// batch x prompts keep/drop indicator.
struct PromptMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  static PromptMask all(std::size_t rows, std::size_t cols) {
    return {rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
  }
  bool kept(std::size_t b, std::size_t i) const { return keep[b * cols + i] != 0; }
  std::size_t column_count(std::size_t i) const;

  friend bool operator==(const PromptMask&, const PromptMask&) = default;
};

// Each row keeps exactly policy.keep_count(m) prompts drawn uniformly without
// replacement. Deterministic in (seed, step).
PromptMask sample_dropout(const DropoutPolicy& policy, std::size_t batch_size, std::size_t m, std::uint64_t seed,
                          std::uint64_t step);

// -log probs[label].
double cross_entropy(std::span<const double> probs, std::size_t label);
// -log softmax(similarities / tau)[label], via log-sum-exp.
double cross_entropy_from_similarities(std::span<const double> similarities, double tau, std::size_t label);

struct LossOptions {
  const PromptMask* global_mask = nullptr;  // null keeps every global prompt
  const PromptMask* local_mask = nullptr;   // null keeps every local prompt
  double lambda_div = 0.0;
  std::size_t threads = 1;
};

struct LossTerms {
  double global = 0.0;
  double multiscale = 0.0;
  double diversity = 0.0;
  double total = 0.0;
};

// Sum over global prompts of the mean CE over the images that kept the prompt.
double global_loss(const GallopModel& model, const Batch& batch, const PromptMask& mask);
// Sum over local prompts j of the mean CE at scale k_j.
double multiscale_loss(const GallopModel& model, const Batch& batch);
// 1/(N(N-1)) * sum_{i<j} |<t_i, t_j>| over class-free prompt encodings.
double diversity_loss(const GallopModel& model);
double diversity_from_encodings(std::span<const std::vector<double>> encodings);
double total_loss(const GallopModel& model, const Batch& batch, const PromptMask& mask, double lambda_div);

// Forward quantities recorded for one loss evaluation.
struct GradientTape {
  struct LocalChoice {
    std::vector<double> probs;
    // Selected patch rows per class.
    std::vector<std::vector<std::uint32_t>> rows;
  };
  struct RecordTrace {
    const FeatureRecord* record = nullptr;
    Matrix aligned;                                 // h(Z_l), empty when n == 0
    std::vector<std::vector<double>> global_probs;  // empty entry = prompt dropped
    std::vector<LocalChoice> local;                 // empty probs = prompt dropped
  };

  TextFeatures text;
  std::vector<double> global_weight;  // 1 / (#images keeping prompt i)
  std::vector<double> local_weight;
  std::vector<RecordTrace> records;
  std::vector<std::vector<double>> free_text;  // class-free encodings, lambda_div > 0 only
  double lambda_div = 0.0;
  double tau = kDefaultTau;
};

struct LossEvaluation {
  LossTerms terms;
  GradientTape tape;
};

LossTerms evaluate_loss(const GallopModel& model, const Batch& batch, const LossOptions& options);
LossEvaluation record_loss(const GallopModel& model, const Batch& batch, const LossOptions& options);

// Gradients for every trainable tensor. The encoder and class tokens are
// frozen and have no entry.
struct Gradients {
  std::vector<Matrix> global;
  std::vector<Matrix> local;
  Matrix theta;
};

Gradients backward(const GallopModel& model, const GradientTape& tape, std::size_t threads = 1);

// lr_max * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max);

// v <- momentum * v + (grad + wd * param); param <- param - lr * v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum, double weight_decay);

class SgdOptimizer {
 public:
  SgdOptimizer(const GallopModel& model, double momentum, double weight_decay);
  void step(GallopModel& model, const Gradients& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Matrix> v_global_;
  std::vector<Matrix> v_local_;
  Matrix v_theta_;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  LossTerms loss;         // record-weighted means over the epoch's batches
  double train_top1 = 0.0;
  double lr = 0.0;        // rate used by the epoch's first step
};

struct TrainResult {
  GallopModel model;
  std::vector<EpochStats> trace;
};

GallopModel init_model(const TrainConfig& config, const FeatureDataset& dataset);
// Throws kConfig before the first step when the config does not fit the data.
TrainResult train(GallopModel model, const FeatureDataset& dataset, const TrainConfig& config);
TrainResult train(const FeatureDataset& dataset, const TrainConfig& config);

std::string trace_to_jsonl(const std::vector<EpochStats>& trace);

struct GradCheckOptions {
  std::size_t coords_per_group = 50;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckGroup {
  std::string name;
  std::size_t checked = 0;
  // Coordinates resampled because a +-step perturbation changed a top-k selection.
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Relative error |a - f| / max(|a|, |f|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-6;
double relative_error(double analytic, double numeric);

// Central differences on random coordinates of the global prompts, local
// prompts and alignment map against backward().
GradCheckReport gradient_check(const GallopModel& model, const Batch& batch, const LossOptions& loss,
                               const GradCheckOptions& options);

}  // namespace gallop

#endif  // GALLOP_TRAINER_HPP
