#ifndef GALLOP_GALLOP_HEAD_HPP
#define GALLOP_GALLOP_HEAD_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gallop/matrix.hpp"

namespace gallop {

struct GallopModel;

// Trainable d x d map applied to every local feature; starts as identity.
struct AlignmentMap {
  Matrix theta;

  AlignmentMap() = default;
  explicit AlignmentMap(std::size_t d) : theta(Matrix::identity(d)) {}

  std::size_t dim() const { return theta.rows(); }

  friend bool operator==(const AlignmentMap&, const AlignmentMap&) = default;
};

// Local prompt j (0-based) uses k_j = k1 + j * delta_k patches.
struct ScaleSchedule {
  std::uint32_t k1 = 1;
  std::uint32_t delta_k = 0;
  std::uint32_t n = 0;

  std::uint32_t k(std::size_t j) const { return k1 + static_cast<std::uint32_t>(j) * delta_k; }
  std::uint32_t largest() const { return n == 0 ? 0 : k(n - 1); }

  // Throws kConfig naming the first prompt whose scale exceeds L.
  void check_fits(std::size_t L) const;

  friend bool operator==(const ScaleSchedule&, const ScaleSchedule&) = default;
};

inline constexpr double kDefaultTau = 0.01;

// Row i of Z (L x d, row-major) dotted with t.
std::vector<double> patch_similarities(std::span<const float> locals, std::size_t L, std::size_t d,
                                       std::span<const double> text);
std::vector<double> patch_similarities(const Matrix& locals, std::span<const double> text);

// Indices of the k largest values in ascending index order. Ties at the k-th
// rank go to the lower index.
std::vector<std::uint32_t> topk_indices(std::span<const double> similarities, std::size_t k);

std::vector<std::uint8_t> topk_mask(std::span<const double> similarities, std::size_t k);

// (1/k) * sum of the k largest similarities, summed in row order.
double topk_mean(std::span<const double> similarities, std::size_t k);

double topk_similarity(const Matrix& locals, std::span<const double> text, std::size_t k);
std::vector<std::uint8_t> topk_mask(const Matrix& locals, std::span<const double> text, std::size_t k);

// Row i of the result is theta * z_i. No renormalization.
Matrix align_locals(const AlignmentMap& map, std::span<const float> locals, std::size_t L, std::size_t d);
Matrix align_locals(const AlignmentMap& map, const Matrix& locals);

// Widen float32 locals to an L x d matrix.
Matrix locals_matrix(std::span<const float> locals, std::size_t L, std::size_t d);

// softmax(similarities / tau), max-subtracted.
std::vector<double> class_probabilities(std::span<const double> similarities, double tau);

// log softmax(similarities / tau).
std::vector<double> class_log_probabilities(std::span<const double> similarities, double tau);

// p(y | Z_l; local prompt j, k_j, theta) over all classes.
std::vector<double> local_class_probability(const GallopModel& model, std::span<const float> locals,
                                            std::size_t L, std::size_t local_prompt);

}  // namespace gallop

#endif  // GALLOP_GALLOP_HEAD_HPP
