#ifndef GALLOP_FEATURE_STORE_HPP
#define GALLOP_FEATURE_STORE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gallop {

// One image: an L2-normalized global feature and L local (patch) features.
// Stored at float32 so that files round-trip bit-exactly.
struct FeatureRecord {
  std::uint32_t label = 0;
  std::vector<float> global;  // length d
  std::vector<float> locals;  // L x d, row-major

  std::span<const float> local_row(std::size_t i, std::size_t d) const {
    return {locals.data() + i * d, d};
  }

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureDataset {
  std::uint32_t num_classes = 0;
  std::vector<std::string> class_names;
  std::uint32_t d = 0;
  std::uint32_t L = 0;
  std::vector<FeatureRecord> records;

  friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

// Throws Error(kData) naming the first violated invariant.
void validate_dataset(const FeatureDataset& dataset);

// Binary feature file, little-endian:
//   "GLFv1\0", u32 d, u32 L, u32 num_classes, u64 num_records,
//   num_classes x (u16 length, UTF-8 bytes),
//   num_records x (u32 label, d f32 global, L*d f32 locals).
FeatureDataset read_dataset(const std::filesystem::path& path);
void write_dataset(const FeatureDataset& dataset, const std::filesystem::path& path);

FeatureDataset decode_dataset(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_dataset(const FeatureDataset& dataset);

inline constexpr char kFeatureMagic[6] = {'G', 'L', 'F', 'v', '1', '\0'};

struct SynthSpec {
  std::uint32_t num_classes = 4;
  std::uint32_t shots_per_class = 16;
  std::uint32_t d = 16;
  std::uint32_t L = 32;
  std::uint32_t planted_patches_per_image = 2;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Held-out split sizes.
  std::uint32_t test_shots_per_class = 50;
  std::uint32_t ood_records = 200;
  // Zero-shot prior: class directions are pulled toward the zero-shot class
  // embeddings of a toy text encoder (the anchors). Before orthogonalization
  // mu_c = w * a_c + sqrt(1 - w^2) * r_c with r_c a random unit vector, so w
  // is roughly cos(mu_c, a_c). w = 0 gives purely random directions.
  double anchor_weight = 0.7;
  std::uint64_t anchor_encoder_seed = 42;
  std::uint32_t anchor_token_dim = 32;
  std::uint32_t anchor_prompt_tokens = 4;
};

struct SyntheticSplits {
  FeatureDataset train;
  FeatureDataset test_id;
  FeatureDataset test_ood;
  // Generator metadata, not serialized: unit class directions (one row per
  // class) and, per record, which local rows carry the planted signal.
  std::vector<std::vector<double>> class_directions;
  std::vector<std::vector<std::uint32_t>> train_planted_rows;
};

SyntheticSplits generate_synthetic(const SynthSpec& spec);
// Explicit anchors (num_classes vectors of length d) replace the toy-encoder
// ones; ignored when anchor_weight is 0.
SyntheticSplits generate_synthetic(const SynthSpec& spec, std::span<const std::vector<double>> anchors);

}  // namespace gallop

#endif  // GALLOP_FEATURE_STORE_HPP
