#include "gallop/prompt_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gallop/error.hpp"

namespace gallop {

namespace {

constexpr double kDegenerateNorm = 1e-8;

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed & 0xFFFFFFFFu, seed >> 32, stream};
  return std::mt19937_64(seq);
}

}  // namespace

void TextEncoder::check_shapes(const Prompt& prompt, const Matrix& class_tokens) const {
  if (prompt.rows() == 0) fail(ErrorCode::kShape, "prompt has no tokens");
  if (prompt.cols() != token_dim()) {
    fail(ErrorCode::kShape, "prompt token width " + std::to_string(prompt.cols()) +
                                " does not match encoder width " + std::to_string(token_dim()));
  }
  if (class_tokens.rows() > 0 && class_tokens.cols() != token_dim()) {
    fail(ErrorCode::kShape, "class token width " + std::to_string(class_tokens.cols()) +
                                " does not match encoder width " + std::to_string(token_dim()));
  }
  if (prompt.rows() + class_tokens.rows() > max_tokens()) {
    fail(ErrorCode::kShape, "token sequence longer than " + std::to_string(max_tokens()));
  }
}

std::vector<double> TextEncoder::encode(const Prompt& prompt, const Matrix& class_tokens) const {
  check_shapes(prompt, class_tokens);
  return forward(prompt, class_tokens);
}

Matrix TextEncoder::encode_vjp(const Prompt& prompt, const Matrix& class_tokens,
                               std::span<const double> grad_out) const {
  check_shapes(prompt, class_tokens);
  if (grad_out.size() != output_dim()) fail(ErrorCode::kShape, "output gradient has wrong length");
  return backward(prompt, class_tokens, grad_out);
}

ToyTextEncoder::ToyTextEncoder(std::uint64_t seed, std::size_t token_dim, std::size_t output_dim)
    : seed_(seed),
      token_dim_(token_dim),
      output_dim_(output_dim),
      position_logits_(kMaxTokens),
      w_in_(output_dim, token_dim),
      w_out_(output_dim, output_dim) {
  if (token_dim == 0 || output_dim == 0) fail(ErrorCode::kArgument, "encoder dimensions must be >= 1");
  auto rng = seeded(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& g : position_logits_) g = normal(rng);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(token_dim));
  for (auto& w : w_in_.flat()) w = in_scale * normal(rng);
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(output_dim));
  for (auto& w : w_out_.flat()) w = out_scale * normal(rng);
}

std::string ToyTextEncoder::id() const {
  return "toy-v1:seed=" + std::to_string(seed_) + ":dp=" + std::to_string(token_dim_) +
         ":d=" + std::to_string(output_dim_);
}

ToyTextEncoder::Activations ToyTextEncoder::run(const Prompt& prompt, const Matrix& class_tokens) const {
  const std::size_t v = prompt.rows();
  const std::size_t seq = v + class_tokens.rows();

  Activations a;
  a.weights.resize(seq);
  const double g_max = *std::max_element(position_logits_.begin(), position_logits_.begin() + seq);
  double z = 0.0;
  for (std::size_t t = 0; t < seq; ++t) {
    a.weights[t] = std::exp(position_logits_[t] - g_max);
    z += a.weights[t];
  }
  for (auto& w : a.weights) w /= z;

  std::vector<double> pooled(token_dim_, 0.0);
  for (std::size_t t = 0; t < seq; ++t) {
    auto tok = t < v ? prompt.row(t) : class_tokens.row(t - v);
    axpy(a.weights[t], tok, std::span<double>(pooled));
  }

  a.hidden.resize(output_dim_);
  for (std::size_t i = 0; i < output_dim_; ++i) {
    a.hidden[i] = std::tanh(dot(w_in_.row(i), std::span<const double>(pooled)));
  }
  a.output.resize(output_dim_);
  for (std::size_t i = 0; i < output_dim_; ++i) {
    a.output[i] = dot(w_out_.row(i), std::span<const double>(a.hidden));
  }
  a.norm = l2_norm(std::span<const double>(a.output));
  if (a.norm < kDegenerateNorm) {
    a.degenerate = true;
    std::fill(a.output.begin(), a.output.end(), 0.0);
    a.output[0] = 1.0;
  } else {
    for (auto& x : a.output) x /= a.norm;
  }
  return a;
}

std::vector<double> ToyTextEncoder::forward(const Prompt& prompt, const Matrix& class_tokens) const {
  return run(prompt, class_tokens).output;
}

Matrix ToyTextEncoder::backward(const Prompt& prompt, const Matrix& class_tokens,
                                std::span<const double> grad_out) const {
  const Activations a = run(prompt, class_tokens);
  Matrix grad(prompt.rows(), token_dim_);
  if (a.degenerate) return grad;

  // Through the normalization: (I - t t^T) / |u|.
  const double proj = dot(std::span<const double>(a.output), grad_out);
  std::vector<double> grad_u(output_dim_);
  for (std::size_t i = 0; i < output_dim_; ++i) grad_u[i] = (grad_out[i] - a.output[i] * proj) / a.norm;

  std::vector<double> grad_pre(output_dim_, 0.0);
  for (std::size_t i = 0; i < output_dim_; ++i) axpy(grad_u[i], w_out_.row(i), std::span<double>(grad_pre));
  for (std::size_t i = 0; i < output_dim_; ++i) grad_pre[i] *= 1.0 - a.hidden[i] * a.hidden[i];

  std::vector<double> grad_pooled(token_dim_, 0.0);
  for (std::size_t i = 0; i < output_dim_; ++i) axpy(grad_pre[i], w_in_.row(i), std::span<double>(grad_pooled));

  for (std::size_t t = 0; t < prompt.rows(); ++t) {
    axpy(a.weights[t], std::span<const double>(grad_pooled), grad.row(t));
  }
  return grad;
}

std::shared_ptr<const TextEncoder> make_toy_encoder(std::uint64_t seed, std::size_t token_dim,
                                                    std::size_t output_dim) {
  return std::make_shared<const ToyTextEncoder>(seed, token_dim, output_dim);
}

ClassTokens make_toy_class_tokens(std::uint64_t seed, std::size_t num_classes, std::size_t token_dim) {
  auto rng = seeded(seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  ClassTokens tokens;
  tokens.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Matrix tok(1, token_dim);
    for (auto& x : tok.flat()) x = normal(rng);
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

PromptSet init_prompts(std::uint64_t seed, std::size_t m, std::size_t n, std::size_t tokens,
                       std::size_t token_dim) {
  if (m == 0 || tokens == 0 || token_dim == 0) {
    fail(ErrorCode::kArgument, "init_prompts needs m >= 1, V >= 1 and d' >= 1");
  }
  auto rng = seeded(seed, 2);
  std::normal_distribution<double> normal(0.0, kPromptInitStd);
  PromptSet set;
  auto draw = [&] {
    Prompt p(tokens, token_dim);
    for (auto& x : p.flat()) x = normal(rng);
    return p;
  };
  for (std::size_t i = 0; i < m; ++i) set.global.push_back(draw());
  for (std::size_t j = 0; j < n; ++j) set.local.push_back(draw());
  return set;
}

std::vector<std::vector<double>> zero_shot_anchors(const TextEncoder& encoder, const ClassTokens& class_tokens,
                                                   std::size_t prompt_tokens) {
  const Prompt blank(prompt_tokens, encoder.token_dim());
  std::vector<std::vector<double>> out;
  out.reserve(class_tokens.size());
  for (const auto& c : class_tokens) out.push_back(encoder.encode(blank, c));
  return out;
}

}  // namespace gallop
