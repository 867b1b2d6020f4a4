#ifndef GALLOP_MODEL_HPP
#define GALLOP_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gallop/gallop_head.hpp"
#include "gallop/prompt_encoder.hpp"

namespace gallop {

// Full trainable state plus the frozen pieces it is evaluated against.
struct GallopModel {
  std::shared_ptr<const TextEncoder> encoder;
  std::uint64_t encoder_seed = 0;
  ClassTokens class_tokens;
  PromptSet prompts;
  AlignmentMap alignment;
  ScaleSchedule scales;
  double tau = kDefaultTau;
  // Pass local features through the alignment map when computing L-MCM.
  bool align_locals_for_ood = true;

  std::size_t num_classes() const { return class_tokens.size(); }
  std::size_t feature_dim() const { return encoder->output_dim(); }

  // Throws kConfig/kShape when the pieces do not fit together.
  void validate() const;
};

struct ModelShape {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::size_t global_prompts = 4;
  std::size_t local_prompts = 4;
  std::size_t tokens_per_prompt = 4;
  std::size_t token_dim = 32;
  std::uint64_t encoder_seed = 42;
  std::uint64_t prompt_seed = 0;
  ScaleSchedule scales{2, 2, 4};
  double tau = kDefaultTau;
  bool align_locals_for_ood = true;
};

// Toy encoder + toy class tokens + N(0, 0.02^2) prompts + identity alignment.
GallopModel make_model(const ModelShape& shape);

// Class text features for every prompt: one C x d matrix per prompt.
struct TextFeatures {
  std::vector<Matrix> global;
  std::vector<Matrix> local;
};

Matrix encode_classes(const TextEncoder& encoder, const Prompt& prompt, const ClassTokens& class_tokens);
TextFeatures compute_text_features(const GallopModel& model);

// Checkpoint: one line of JSON header, then float32 little-endian blocks for
// global prompts, local prompts and the alignment map, in that order.
void save_checkpoint(const GallopModel& model, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const GallopModel& model);
GallopModel load_checkpoint(const std::filesystem::path& path);
GallopModel decode_checkpoint(std::span<const std::uint8_t> bytes);
// The JSON header alone, pretty-printed.
std::string checkpoint_header(const std::filesystem::path& path);

inline constexpr int kCheckpointVersion = 1;

}  // namespace gallop

#endif  // GALLOP_MODEL_HPP
