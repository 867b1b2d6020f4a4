#include "gallop/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

#include "gallop/error.hpp"

namespace gallop {

using nlohmann::json;

std::size_t DropoutPolicy::keep_count(std::size_t m) const {
  const auto keep = static_cast<std::size_t>(std::llround((1.0 - rate) * static_cast<double>(m)));
  return std::clamp<std::size_t>(keep, 1, std::max<std::size_t>(m, 1));
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, what); };
  if (batch_size == 0) bad("batch_size must be >= 1");
  if (epochs == 0) bad("epochs must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) bad("lr must be finite and >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) bad("weight_decay must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must be in [0, 1)");
  if (!(tau > 0.0) || !std::isfinite(tau)) bad("tau must be finite and > 0");
  if (!(dropout.rate >= 0.0 && dropout.rate < 1.0)) bad("dropout.rate must be in [0, 1)");
  if (global_prompts == 0) bad("global_prompts must be >= 1");
  if (tokens_per_prompt == 0) bad("tokens_per_prompt must be >= 1");
  if (token_dim == 0) bad("token_dim must be >= 1");
  if (local_prompts > 0 && k1 == 0) bad("scales.k1 must be >= 1");
  if (!(lambda_div >= 0.0) || !std::isfinite(lambda_div)) bad("lambda_div must be finite and >= 0");
  if (lambda_div > 0.0 && global_prompts + local_prompts < 2) bad("lambda_div > 0 needs at least two prompts");
  if (threads == 0) bad("threads must be >= 1");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::kConfig, where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::kConfig, where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfig, std::string("bad value for '") + key + "'");
  }
}

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  const json j = parse_text(text);
  reject_unknown(j,
                 {"batch_size", "epochs", "lr", "weight_decay", "momentum", "tau", "dropout", "scales",
                  "global_prompts", "local_prompts", "tokens_per_prompt", "token_dim", "lambda_div", "seed",
                  "encoder_seed", "align_locals_for_ood", "threads"},
                 "config");
  TrainConfig c;
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "momentum", c.momentum);
  read(j, "tau", c.tau);
  read(j, "global_prompts", c.global_prompts);
  read(j, "local_prompts", c.local_prompts);
  read(j, "tokens_per_prompt", c.tokens_per_prompt);
  read(j, "token_dim", c.token_dim);
  read(j, "lambda_div", c.lambda_div);
  read(j, "seed", c.seed);
  read(j, "encoder_seed", c.encoder_seed);
  read(j, "align_locals_for_ood", c.align_locals_for_ood);
  read(j, "threads", c.threads);
  if (j.contains("dropout")) {
    const json& d = j.at("dropout");
    reject_unknown(d, {"rate", "apply_to_local"}, "dropout");
    read(d, "rate", c.dropout.rate);
    read(d, "apply_to_local", c.dropout.apply_to_local);
  }
  if (j.contains("scales")) {
    const json& s = j.at("scales");
    reject_unknown(s, {"k1", "delta_k"}, "scales");
    read(s, "k1", c.k1);
    read(s, "delta_k", c.delta_k);
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string());
  return parse_config({std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()});
}

std::string config_to_json(const TrainConfig& c) {
  const json j{
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"momentum", c.momentum},
      {"tau", c.tau},
      {"dropout", {{"rate", c.dropout.rate}, {"apply_to_local", c.dropout.apply_to_local}}},
      {"scales", {{"k1", c.k1}, {"delta_k", c.delta_k}}},
      {"global_prompts", c.global_prompts},
      {"local_prompts", c.local_prompts},
      {"tokens_per_prompt", c.tokens_per_prompt},
      {"token_dim", c.token_dim},
      {"lambda_div", c.lambda_div},
      {"seed", c.seed},
      {"encoder_seed", c.encoder_seed},
      {"align_locals_for_ood", c.align_locals_for_ood},
      {"threads", c.threads},
  };
  return j.dump(2);
}

ModelShape model_shape(const TrainConfig& c, std::size_t num_classes, std::size_t feature_dim) {
  ModelShape s;
  s.num_classes = num_classes;
  s.feature_dim = feature_dim;
  s.global_prompts = c.global_prompts;
  s.local_prompts = c.local_prompts;
  s.tokens_per_prompt = c.tokens_per_prompt;
  s.token_dim = c.token_dim;
  s.encoder_seed = c.encoder_seed;
  s.prompt_seed = c.seed;
  s.scales = c.scales();
  s.tau = c.tau;
  s.align_locals_for_ood = c.align_locals_for_ood;
  return s;
}

SynthSpec parse_synth_spec(const std::string& text) {
  const json j = parse_text(text);
  reject_unknown(j,
                 {"num_classes", "shots_per_class", "d", "L", "planted_patches_per_image", "noise_sigma", "seed",
                  "test_shots_per_class", "ood_records", "anchor"},
                 "synth spec");
  SynthSpec s;
  read(j, "num_classes", s.num_classes);
  read(j, "shots_per_class", s.shots_per_class);
  read(j, "d", s.d);
  read(j, "L", s.L);
  read(j, "planted_patches_per_image", s.planted_patches_per_image);
  read(j, "noise_sigma", s.noise_sigma);
  read(j, "seed", s.seed);
  read(j, "test_shots_per_class", s.test_shots_per_class);
  read(j, "ood_records", s.ood_records);
  if (j.contains("anchor")) {
    const auto& a = j.at("anchor");
    reject_unknown(a, {"weight", "encoder_seed", "token_dim", "prompt_tokens"}, "anchor");
    read(a, "weight", s.anchor_weight);
    read(a, "encoder_seed", s.anchor_encoder_seed);
    read(a, "token_dim", s.anchor_token_dim);
    read(a, "prompt_tokens", s.anchor_prompt_tokens);
  }
  return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
  const json j{
      {"num_classes", s.num_classes},
      {"shots_per_class", s.shots_per_class},
      {"d", s.d},
      {"L", s.L},
      {"planted_patches_per_image", s.planted_patches_per_image},
      {"noise_sigma", s.noise_sigma},
      {"seed", s.seed},
      {"test_shots_per_class", s.test_shots_per_class},
      {"ood_records", s.ood_records},
      {"anchor",
       {{"weight", s.anchor_weight},
        {"encoder_seed", s.anchor_encoder_seed},
        {"token_dim", s.anchor_token_dim},
        {"prompt_tokens", s.anchor_prompt_tokens}}},
  };
  return j.dump(2);
}

}  // namespace gallop
