#include "gallop/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "gallop/error.hpp"

namespace gallop {

using nlohmann::json;

void GallopModel::validate() const {
  if (!encoder) fail(ErrorCode::kConfig, "model has no text encoder");
  if (class_tokens.empty()) fail(ErrorCode::kConfig, "model has no classes");
  if (prompts.global.empty()) fail(ErrorCode::kConfig, "model needs at least one global prompt");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::kConfig, "tau must be finite and > 0");
  if (scales.n != prompts.local.size()) fail(ErrorCode::kConfig, "scale schedule length differs from local prompt count");
  const std::size_t v = prompts.global.front().rows();
  auto check_prompt = [&](const Prompt& p) {
    if (p.rows() != v || p.cols() != encoder->token_dim()) fail(ErrorCode::kShape, "prompt shape mismatch");
  };
  for (const auto& p : prompts.global) check_prompt(p);
  for (const auto& p : prompts.local) check_prompt(p);
  for (const auto& c : class_tokens) {
    if (c.rows() == 0 || c.cols() != encoder->token_dim()) fail(ErrorCode::kShape, "class token shape mismatch");
  }
  const std::size_t d = encoder->output_dim();
  if (alignment.theta.rows() != d || alignment.theta.cols() != d) fail(ErrorCode::kShape, "alignment map must be d x d");
}

GallopModel make_model(const ModelShape& shape) {
  if (shape.num_classes == 0 || shape.feature_dim == 0) fail(ErrorCode::kConfig, "model needs classes and d >= 1");
  if (shape.global_prompts == 0) fail(ErrorCode::kConfig, "global_prompts must be >= 1");
  if (shape.tokens_per_prompt == 0 || shape.token_dim == 0) fail(ErrorCode::kConfig, "prompt shape must be >= 1");
  GallopModel m;
  m.encoder = make_toy_encoder(shape.encoder_seed, shape.token_dim, shape.feature_dim);
  m.encoder_seed = shape.encoder_seed;
  m.class_tokens = make_toy_class_tokens(shape.encoder_seed, shape.num_classes, shape.token_dim);
  m.prompts = init_prompts(shape.prompt_seed, shape.global_prompts, shape.local_prompts, shape.tokens_per_prompt,
                           shape.token_dim);
  m.alignment = AlignmentMap(shape.feature_dim);
  m.scales = shape.scales;
  m.scales.n = static_cast<std::uint32_t>(shape.local_prompts);
  m.tau = shape.tau;
  m.align_locals_for_ood = shape.align_locals_for_ood;
  m.validate();
  return m;
}

Matrix encode_classes(const TextEncoder& encoder, const Prompt& prompt, const ClassTokens& class_tokens) {
  Matrix out(class_tokens.size(), encoder.output_dim());
  for (std::size_t c = 0; c < class_tokens.size(); ++c) {
    const auto t = encoder.encode(prompt, class_tokens[c]);
    std::copy(t.begin(), t.end(), out.row(c).begin());
  }
  return out;
}

TextFeatures compute_text_features(const GallopModel& model) {
  TextFeatures tf;
  for (const auto& p : model.prompts.global) tf.global.push_back(encode_classes(*model.encoder, p, model.class_tokens));
  for (const auto& p : model.prompts.local) tf.local.push_back(encode_classes(*model.encoder, p, model.class_tokens));
  return tf;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

json header_of(const GallopModel& model) {
  std::vector<std::uint32_t> ks;
  for (std::size_t j = 0; j < model.scales.n; ++j) ks.push_back(model.scales.k(j));
  return json{
      {"format", "gallop-checkpoint"},
      {"version", kCheckpointVersion},
      {"m", model.prompts.global.size()},
      {"n", model.prompts.local.size()},
      {"V", model.prompts.tokens()},
      {"d_prime", model.encoder->token_dim()},
      {"d", model.encoder->output_dim()},
      {"encoder", model.encoder->id()},
      {"encoder_seed", model.encoder_seed},
      {"num_classes", model.num_classes()},
      {"scales", {{"k1", model.scales.k1}, {"delta_k", model.scales.delta_k}, {"k", ks}}},
      {"tau", model.tau},
      {"align_locals_for_ood", model.align_locals_for_ood},
  };
}

void put_block(std::vector<std::uint8_t>& out, const Matrix& m) {
  for (double v : m.flat()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

void get_block(std::span<const std::uint8_t> bytes, std::size_t& pos, Matrix& m, const char* what) {
  if (bytes.size() - pos < 4 * m.size()) fail(ErrorCode::kFormat, std::string("checkpoint truncated in ") + what);
  for (auto& v : m.flat()) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) fail(ErrorCode::kData, std::string("non-finite value in ") + what);
    v = f;
  }
}

template <typename T>
T field(const json& h, const char* key) {
  if (!h.contains(key)) fail(ErrorCode::kFormat, std::string("checkpoint header: missing field '") + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kFormat, std::string("checkpoint header: bad value for '") + key + "'");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const GallopModel& model) {
  model.validate();
  const std::string head = header_of(model).dump() + "\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  for (const auto& p : model.prompts.global) put_block(out, p);
  for (const auto& p : model.prompts.local) put_block(out, p);
  put_block(out, model.alignment.theta);
  return out;
}

void save_checkpoint(const GallopModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::kIo, "write failed: " + path.string());
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::pair<json, std::size_t> split_header(std::span<const std::uint8_t> bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (nl == bytes.end()) fail(ErrorCode::kFormat, "checkpoint header: no terminating newline");
  json h;
  try {
    h = json::parse(bytes.begin(), nl);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint header: ") + e.what());
  }
  if (!h.is_object() || h.value("format", "") != "gallop-checkpoint") {
    fail(ErrorCode::kFormat, "checkpoint header: format is not gallop-checkpoint");
  }
  return {h, static_cast<std::size_t>(nl - bytes.begin()) + 1};
}

}  // namespace

GallopModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  auto [h, pos] = split_header(bytes);
  if (field<int>(h, "version") != kCheckpointVersion) fail(ErrorCode::kFormat, "checkpoint header: unsupported version");

  ModelShape shape;
  shape.num_classes = field<std::size_t>(h, "num_classes");
  shape.feature_dim = field<std::size_t>(h, "d");
  shape.global_prompts = field<std::size_t>(h, "m");
  shape.local_prompts = field<std::size_t>(h, "n");
  shape.tokens_per_prompt = field<std::size_t>(h, "V");
  shape.token_dim = field<std::size_t>(h, "d_prime");
  shape.encoder_seed = field<std::uint64_t>(h, "encoder_seed");
  shape.tau = field<double>(h, "tau");
  shape.align_locals_for_ood = h.value("align_locals_for_ood", true);
  const json scales = field<json>(h, "scales");
  shape.scales.k1 = field<std::uint32_t>(scales, "k1");
  shape.scales.delta_k = field<std::uint32_t>(scales, "delta_k");

  GallopModel model = make_model(shape);
  if (field<std::string>(h, "encoder") != model.encoder->id()) {
    fail(ErrorCode::kFormat, "checkpoint header: unknown encoder '" + field<std::string>(h, "encoder") + "'");
  }
  for (auto& p : model.prompts.global) get_block(bytes, pos, p, "global prompts");
  for (auto& p : model.prompts.local) get_block(bytes, pos, p, "local prompts");
  get_block(bytes, pos, model.alignment.theta, "alignment map");
  if (pos != bytes.size()) fail(ErrorCode::kFormat, "checkpoint has trailing bytes");
  return model;
}

GallopModel load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(slurp(path)); }

std::string checkpoint_header(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return split_header(bytes).first.dump(2);
}

}  // namespace gallop
