#ifndef GALLOP_CONFIG_HPP
#define GALLOP_CONFIG_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "gallop/feature_store.hpp"
#include "gallop/gallop_head.hpp"
#include "gallop/model.hpp"

namespace gallop {

struct DropoutPolicy {
  double rate = 0.75;
  bool apply_to_local = false;

  // max(1, round((1 - rate) * m)).
  std::size_t keep_count(std::size_t m) const;
};

// Defaults are the usual ImageNet 16-shot prompt-tuning recipe where it applies
// (batch 128, lr 0.002, 50 epochs, SGD, wd 0.01, momentum 0.9, 4 + 4
// prompts of 4 tokens). Scale schedule and token width are desk-scale.
struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  double lr = 0.002;
  double weight_decay = 0.01;
  double momentum = 0.9;
  double tau = kDefaultTau;
  DropoutPolicy dropout;
  std::uint32_t k1 = 2;
  std::uint32_t delta_k = 2;
  std::size_t global_prompts = 4;
  std::size_t local_prompts = 4;
  std::size_t tokens_per_prompt = 4;
  std::size_t token_dim = 32;
  double lambda_div = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 42;
  bool align_locals_for_ood = true;
  std::size_t threads = 1;

  ScaleSchedule scales() const {
    return {k1, delta_k, static_cast<std::uint32_t>(local_prompts)};
  }

  // Throws kConfig on the first invalid field.
  void validate() const;
};

// Strict: unknown keys are a kConfig error. Missing keys keep their defaults.
TrainConfig parse_config(const std::string& json_text);
TrainConfig load_config(const std::filesystem::path& path);
// Resolved config, pretty-printed with sorted keys.
std::string config_to_json(const TrainConfig& config);

ModelShape model_shape(const TrainConfig& config, std::size_t num_classes, std::size_t feature_dim);

// SynthSpec as JSON (same strictness).
SynthSpec parse_synth_spec(const std::string& json_text);
std::string synth_spec_to_json(const SynthSpec& spec);

}  // namespace gallop

#endif  // GALLOP_CONFIG_HPP
