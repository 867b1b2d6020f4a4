#ifndef GALLOP_INFERENCE_HPP
#define GALLOP_INFERENCE_HPP

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gallop/feature_store.hpp"
#include "gallop/model.hpp"

namespace gallop {

// Which prompt family contributes to the ensemble similarity.
enum class Branch { kBoth, kGlobal, kLocal };

struct Classification {
  std::vector<double> probs;
  std::size_t predicted = 0;
};

struct McmScores {
  double global = 0.0;  // S_G-MCM
  double local = 0.0;   // S_L-MCM
  double combined = 0.0;  // S_GL-MCM
};

struct ScoreReport {
  std::vector<double> probs;
  std::size_t predicted = 0;
  double s_gmcm = 0.0;
  double s_lmcm = 0.0;
  double s_glmcm = 0.0;
};

// Caches class text features for one model so that scoring many records
// encodes each (prompt, class) pair once. The model must outlive it.
class Predictor {
 public:
  explicit Predictor(const GallopModel& model);

  // mean_i <z_g, t_c(p^g_i)> + mean_j topk_{k_j}(h(Z_l), t_c(p^l_j)).
  std::vector<double> ensemble_similarity(const FeatureRecord& record, Branch branch = Branch::kBoth) const;
  Classification classify(const FeatureRecord& record, double tau, Branch branch = Branch::kBoth) const;
  McmScores glmcm(const FeatureRecord& record, double tau) const;
  ScoreReport score(const FeatureRecord& record, double tau) const;

  const TextFeatures& text() const { return text_; }

 private:
  std::size_t patches(const FeatureRecord& record) const;

  const GallopModel& model_;
  TextFeatures text_;
};

std::vector<double> ensemble_similarity(const GallopModel& model, const FeatureRecord& record);
Classification classify(const GallopModel& model, const FeatureRecord& record, double tau);
McmScores glmcm_score(const GallopModel& model, const FeatureRecord& record, double tau);

// Lowest index wins exact ties.
std::size_t argmax(std::span<const double> values);

// max_c softmax_c(similarities / tau).
double global_mcm(std::span<const double> class_similarities, double tau);
// max over (location, class) of the per-location class softmax; table is
// L x C.
double local_mcm(const Matrix& location_class_similarities, double tau);

double top1_accuracy(const GallopModel& model, const FeatureDataset& dataset, Branch branch = Branch::kBoth);
std::vector<ScoreReport> score_dataset(const GallopModel& model, const FeatureDataset& dataset, double tau);

// Threshold = largest t with at least 95% of id_scores >= t; returns the
// fraction of ood_scores >= t. Higher score means more in-distribution.
double fpr_at_95_tpr(std::span<const double> id_scores, std::span<const double> ood_scores);
// Mann-Whitney: (#{id > ood} + 0.5 #{id == ood}) / (|id| |ood|).
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct OodMetrics {
  double fpr95 = 0.0;
  double auroc = 0.0;
};
OodMetrics ood_metrics(std::span<const double> id_scores, std::span<const double> ood_scores);

// record_index,label,predicted,prob_max,s_gmcm,s_lmcm,s_glmcm at 9 significant digits.
std::string score_csv(const FeatureDataset& dataset, std::span<const ScoreReport> reports);
void write_score_csv(const std::filesystem::path& path, const FeatureDataset& dataset,
                     std::span<const ScoreReport> reports);

}  // namespace gallop

#endif  // GALLOP_INFERENCE_HPP
