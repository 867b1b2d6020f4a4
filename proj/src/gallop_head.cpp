#include "gallop/gallop_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gallop/error.hpp"
#include "gallop/model.hpp"

namespace gallop {

void ScaleSchedule::check_fits(std::size_t L) const {
  if (n > 0 && k1 == 0) fail(ErrorCode::kConfig, "scale k1 must be >= 1");
  for (std::size_t j = 0; j < n; ++j) {
    if (k(j) > L) {
      fail(ErrorCode::kConfig, "local prompt " + std::to_string(j) + " has scale k=" + std::to_string(k(j)) +
                                   " but only L=" + std::to_string(L) + " local features");
    }
  }
}

std::vector<double> patch_similarities(std::span<const float> locals, std::size_t L, std::size_t d,
                                       std::span<const double> text) {
  if (locals.size() != L * d || text.size() != d) fail(ErrorCode::kShape, "patch_similarities: shape mismatch");
  std::vector<double> sims(L);
  for (std::size_t i = 0; i < L; ++i) sims[i] = dot(locals.subspan(i * d, d), text);
  return sims;
}

std::vector<double> patch_similarities(const Matrix& locals, std::span<const double> text) {
  if (text.size() != locals.cols()) fail(ErrorCode::kShape, "patch_similarities: shape mismatch");
  std::vector<double> sims(locals.rows());
  for (std::size_t i = 0; i < locals.rows(); ++i) sims[i] = dot(locals.row(i), text);
  return sims;
}

std::vector<std::uint32_t> topk_indices(std::span<const double> sims, std::size_t k) {
  if (k < 1 || k > sims.size()) {
    fail(ErrorCode::kArgument, "top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(sims.size()) + "]");
  }
  std::vector<std::uint32_t> order(sims.size());
  std::iota(order.begin(), order.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
  };
  if (k < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), before);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::uint8_t> topk_mask(std::span<const double> sims, std::size_t k) {
  std::vector<std::uint8_t> mask(sims.size(), 0);
  for (auto i : topk_indices(sims, k)) mask[i] = 1;
  return mask;
}

double topk_mean(std::span<const double> sims, std::size_t k) {
  double s = 0.0;
  for (auto i : topk_indices(sims, k)) s += sims[i];
  return s / static_cast<double>(k);
}

double topk_similarity(const Matrix& locals, std::span<const double> text, std::size_t k) {
  return topk_mean(patch_similarities(locals, text), k);
}

std::vector<std::uint8_t> topk_mask(const Matrix& locals, std::span<const double> text, std::size_t k) {
  return topk_mask(patch_similarities(locals, text), k);
}

Matrix locals_matrix(std::span<const float> locals, std::size_t L, std::size_t d) {
  if (locals.size() != L * d) fail(ErrorCode::kShape, "locals: expected L*d values");
  Matrix z(L, d);
  std::copy(locals.begin(), locals.end(), z.flat().begin());
  return z;
}

Matrix align_locals(const AlignmentMap& map, const Matrix& locals) {
  const std::size_t d = locals.cols();
  if (map.theta.rows() != d || map.theta.cols() != d) {
    fail(ErrorCode::kShape, "alignment map is " + std::to_string(map.theta.rows()) + "x" +
                                std::to_string(map.theta.cols()) + " but features have d=" + std::to_string(d));
  }
  Matrix out(locals.rows(), d);
  for (std::size_t i = 0; i < locals.rows(); ++i) {
    auto z = locals.row(i);
    auto o = out.row(i);
    for (std::size_t r = 0; r < d; ++r) o[r] = dot(map.theta.row(r), z);
  }
  return out;
}

Matrix align_locals(const AlignmentMap& map, std::span<const float> locals, std::size_t L, std::size_t d) {
  return align_locals(map, locals_matrix(locals, L, d));
}

std::vector<double> class_log_probabilities(std::span<const double> sims, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kArgument, "temperature must be > 0");
  if (sims.empty()) fail(ErrorCode::kArgument, "no classes");
  std::vector<double> out(sims.size());
  const double top = *std::max_element(sims.begin(), sims.end());
  double z = 0.0;
  for (std::size_t c = 0; c < sims.size(); ++c) {
    out[c] = (sims[c] - top) / tau;
    z += std::exp(out[c]);
  }
  const double log_z = std::log(z);
  for (auto& x : out) x -= log_z;
  return out;
}

std::vector<double> class_probabilities(std::span<const double> sims, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kArgument, "temperature must be > 0");
  if (sims.empty()) fail(ErrorCode::kArgument, "no classes");
  std::vector<double> out(sims.size());
  const double top = *std::max_element(sims.begin(), sims.end());
  double z = 0.0;
  for (std::size_t c = 0; c < sims.size(); ++c) {
    out[c] = std::exp((sims[c] - top) / tau);
    z += out[c];
  }
  for (auto& x : out) x /= z;
  return out;
}

std::vector<double> local_class_probability(const GallopModel& model, std::span<const float> locals,
                                            std::size_t L, std::size_t j) {
  if (j >= model.prompts.local.size()) fail(ErrorCode::kArgument, "local prompt index out of range");
  const std::size_t k = model.scales.k(j);
  if (k > L) {
    fail(ErrorCode::kConfig, "local prompt " + std::to_string(j) + " has scale k=" + std::to_string(k) +
                                 " but only L=" + std::to_string(L) + " local features");
  }
  const Matrix aligned = align_locals(model.alignment, locals, L, model.feature_dim());
  const Matrix text = encode_classes(*model.encoder, model.prompts.local[j], model.class_tokens);
  std::vector<double> sims(model.num_classes());
  for (std::size_t c = 0; c < sims.size(); ++c) sims[c] = topk_similarity(aligned, text.row(c), k);
  return class_probabilities(sims, model.tau);
}

}  // namespace gallop
