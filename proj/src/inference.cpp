#include "gallop/inference.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>

#include "gallop/error.hpp"

namespace gallop {

Predictor::Predictor(const GallopModel& model) : model_(model), text_(compute_text_features(model)) {
  model.validate();
}

std::size_t Predictor::patches(const FeatureRecord& record) const {
  const std::size_t d = model_.feature_dim();
  if (record.global.size() != d || record.locals.empty() || record.locals.size() % d != 0) {
    fail(ErrorCode::kShape, "record dimensions do not match model feature dimension " + std::to_string(d));
  }
  return record.locals.size() / d;
}

std::vector<double> Predictor::ensemble_similarity(const FeatureRecord& record, Branch branch) const {
  const std::size_t L = patches(record);
  const std::size_t classes = model_.num_classes();
  const auto& text = text_;
  std::vector<double> sims(classes, 0.0);

  if (branch != Branch::kLocal) {
    std::vector<double> g(classes, 0.0);
    for (const auto& t : text.global) {
      for (std::size_t c = 0; c < classes; ++c) g[c] += dot(std::span<const float>(record.global), t.row(c));
    }
    for (std::size_t c = 0; c < classes; ++c) sims[c] += g[c] / static_cast<double>(text.global.size());
  }
  if (branch != Branch::kGlobal && !text.local.empty()) {
    model_.scales.check_fits(L);
    const Matrix aligned = align_locals(model_.alignment, record.locals, L, model_.feature_dim());
    std::vector<double> l(classes, 0.0);
    for (std::size_t j = 0; j < text.local.size(); ++j) {
      const std::size_t k = model_.scales.k(j);
      for (std::size_t c = 0; c < classes; ++c) l[c] += topk_similarity(aligned, text.local[j].row(c), k);
    }
    for (std::size_t c = 0; c < classes; ++c) sims[c] += l[c] / static_cast<double>(text.local.size());
  } else if (branch == Branch::kLocal) {
    fail(ErrorCode::kArgument, "local branch requested on a model without local prompts");
  }
  return sims;
}

Classification Predictor::classify(const FeatureRecord& record, double tau, Branch branch) const {
  Classification out;
  const auto sims = ensemble_similarity(record, branch);
  out.probs = class_probabilities(sims, tau);
  out.predicted = argmax(out.probs);
  return out;
}

McmScores Predictor::glmcm(const FeatureRecord& record, double tau) const {
  const std::size_t L = patches(record);
  const std::size_t classes = model_.num_classes();
  McmScores s;

  std::vector<double> g(classes, 0.0);
  for (const auto& t : text_.global) {
    for (std::size_t c = 0; c < classes; ++c) g[c] += dot(std::span<const float>(record.global), t.row(c));
  }
  for (auto& x : g) x /= static_cast<double>(text_.global.size());
  s.global = global_mcm(g, tau);

  if (!text_.local.empty()) {
    const Matrix locals = model_.align_locals_for_ood
                              ? align_locals(model_.alignment, record.locals, L, model_.feature_dim())
                              : locals_matrix(record.locals, L, model_.feature_dim());
    Matrix table(L, classes);
    for (const auto& t : text_.local) {
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t c = 0; c < classes; ++c) table(i, c) += dot(locals.row(i), t.row(c));
      }
    }
    for (auto& x : table.flat()) x /= static_cast<double>(text_.local.size());
    s.local = local_mcm(table, tau);
  }
  s.combined = s.global + s.local;
  return s;
}

ScoreReport Predictor::score(const FeatureRecord& record, double tau) const {
  ScoreReport r;
  auto cls = classify(record, tau);
  r.probs = std::move(cls.probs);
  r.predicted = cls.predicted;
  const auto m = glmcm(record, tau);
  r.s_gmcm = m.global;
  r.s_lmcm = m.local;
  r.s_glmcm = m.combined;
  return r;
}

std::vector<double> ensemble_similarity(const GallopModel& model, const FeatureRecord& record) {
  return Predictor(model).ensemble_similarity(record);
}

Classification classify(const GallopModel& model, const FeatureRecord& record, double tau) {
  return Predictor(model).classify(record, tau);
}

McmScores glmcm_score(const GallopModel& model, const FeatureRecord& record, double tau) {
  return Predictor(model).glmcm(record, tau);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::kArgument, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double global_mcm(std::span<const double> sims, double tau) {
  const auto p = class_probabilities(sims, tau);
  return *std::max_element(p.begin(), p.end());
}

double local_mcm(const Matrix& table, double tau) {
  if (table.rows() == 0) fail(ErrorCode::kArgument, "local MCM needs at least one location");
  double best = 0.0;
  for (std::size_t i = 0; i < table.rows(); ++i) best = std::max(best, global_mcm(table.row(i), tau));
  return best;
}

double top1_accuracy(const GallopModel& model, const FeatureDataset& dataset, Branch branch) {
  if (dataset.records.empty()) fail(ErrorCode::kArgument, "accuracy of an empty dataset");
  const Predictor predictor(model);
  std::size_t correct = 0;
  for (const auto& r : dataset.records) {
    if (predictor.classify(r, model.tau, branch).predicted == r.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.records.size());
}

std::vector<ScoreReport> score_dataset(const GallopModel& model, const FeatureDataset& dataset, double tau) {
  const Predictor predictor(model);
  std::vector<ScoreReport> out;
  out.reserve(dataset.records.size());
  for (const auto& r : dataset.records) out.push_back(predictor.score(r, tau));
  return out;
}

namespace {

void require_scores(std::span<const double> id, std::span<const double> ood) {
  if (id.empty() || ood.empty()) fail(ErrorCode::kArgument, "OOD metrics need nonempty ID and OOD score lists");
}

}  // namespace

double fpr_at_95_tpr(std::span<const double> id, std::span<const double> ood) {
  require_scores(id, ood);
  std::vector<double> sorted(id.begin(), id.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // Smallest count that reaches 95% of the ID set, in integer arithmetic.
  const std::size_t need = (95 * sorted.size() + 99) / 100;
  const double threshold = sorted[need - 1];
  const auto passed = std::count_if(ood.begin(), ood.end(), [&](double s) { return s >= threshold; });
  return static_cast<double>(passed) / static_cast<double>(ood.size());
}

double auroc(std::span<const double> id, std::span<const double> ood) {
  require_scores(id, ood);
  std::vector<double> sorted(ood.begin(), ood.end());
  std::sort(sorted.begin(), sorted.end());
  // Twice the Mann-Whitney U statistic, kept integral.
  std::uint64_t twice_u = 0;
  for (double s : id) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), s);
    const auto hi = std::upper_bound(lo, sorted.end(), s);
    twice_u += 2 * static_cast<std::uint64_t>(lo - sorted.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

OodMetrics ood_metrics(std::span<const double> id, std::span<const double> ood) {
  return {fpr_at_95_tpr(id, ood), auroc(id, ood)};
}

std::string score_csv(const FeatureDataset& dataset, std::span<const ScoreReport> reports) {
  if (reports.size() != dataset.records.size()) fail(ErrorCode::kArgument, "one score report per record expected");
  std::string out = "record_index,label,predicted,prob_max,s_gmcm,s_lmcm,s_glmcm\n";
  char line[256];
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const double prob_max = *std::max_element(r.probs.begin(), r.probs.end());
    std::snprintf(line, sizeof(line), "%zu,%" PRIu32 ",%zu,%.9g,%.9g,%.9g,%.9g\n", i, dataset.records[i].label,
                  r.predicted, prob_max, r.s_gmcm, r.s_lmcm, r.s_glmcm);
    out += line;
  }
  return out;
}

void write_score_csv(const std::filesystem::path& path, const FeatureDataset& dataset,
                     std::span<const ScoreReport> reports) {
  const std::string text = score_csv(dataset, reports);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) fail(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace gallop
