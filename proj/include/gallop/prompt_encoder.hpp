#ifndef GALLOP_PROMPT_ENCODER_HPP
#define GALLOP_PROMPT_ENCODER_HPP

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gallop/matrix.hpp"

namespace gallop {

// A prompt is V learnable token embeddings (V x d').
using Prompt = Matrix;

struct PromptSet {
  std::vector<Prompt> global;  // m >= 1
  std::vector<Prompt> local;   // n >= 0

  std::size_t tokens() const { return global.empty() ? 0 : global.front().rows(); }
  std::size_t token_dim() const { return global.empty() ? 0 : global.front().cols(); }

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

// Frozen class-name token embeddings, one C_c x d' matrix per class.
using ClassTokens = std::vector<Matrix>;

// Frozen map from a token sequence [prompt; class tokens] to a unit vector.
// Implementations must be deterministic and immutable after construction.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual std::size_t token_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::size_t max_tokens() const = 0;
  virtual std::string id() const = 0;

  // t = T([prompt; class_tokens]). class_tokens may have zero rows.
  std::vector<double> encode(const Prompt& prompt, const Matrix& class_tokens) const;

  // Vector-Jacobian product: d<grad_out, t>/d prompt, shape V x d'.
  Matrix encode_vjp(const Prompt& prompt, const Matrix& class_tokens,
                    std::span<const double> grad_out) const;

 protected:
  // Inputs already shape-checked.
  virtual std::vector<double> forward(const Prompt& prompt, const Matrix& class_tokens) const = 0;
  virtual Matrix backward(const Prompt& prompt, const Matrix& class_tokens,
                          std::span<const double> grad_out) const = 0;

 private:
  void check_shapes(const Prompt& prompt, const Matrix& class_tokens) const;
};

// Desk-scale stand-in for a transformer text tower:
//   x = sum_t softmax(g)_t s_t,  t = normalize(W2 tanh(W1 x)),
// with g, W1, W2 fixed seeded Gaussians. Pre-normalization norms below 1e-8
// map to the first standard basis vector.
class ToyTextEncoder final : public TextEncoder {
 public:
  static constexpr std::size_t kMaxTokens = 77;

  ToyTextEncoder(std::uint64_t seed, std::size_t token_dim, std::size_t output_dim);

  std::size_t token_dim() const override { return token_dim_; }
  std::size_t output_dim() const override { return output_dim_; }
  std::size_t max_tokens() const override { return kMaxTokens; }
  std::string id() const override;

  std::uint64_t seed() const { return seed_; }

  // Frozen parameters, exposed for frozen-ness checks.
  const std::vector<double>& position_logits() const { return position_logits_; }
  const Matrix& input_map() const { return w_in_; }
  const Matrix& output_map() const { return w_out_; }

 protected:
  std::vector<double> forward(const Prompt& prompt, const Matrix& class_tokens) const override;
  Matrix backward(const Prompt& prompt, const Matrix& class_tokens,
                  std::span<const double> grad_out) const override;

 private:
  struct Activations {
    std::vector<double> weights;  // positional weights over the sequence
    std::vector<double> hidden;   // tanh(W1 x)
    std::vector<double> output;
    double norm = 0.0;
    bool degenerate = false;
  };
  Activations run(const Prompt& prompt, const Matrix& class_tokens) const;

  std::uint64_t seed_;
  std::size_t token_dim_;
  std::size_t output_dim_;
  std::vector<double> position_logits_;
  Matrix w_in_;   // d x d'
  Matrix w_out_;  // d x d
};

std::shared_ptr<const TextEncoder> make_toy_encoder(std::uint64_t seed, std::size_t token_dim,
                                                    std::size_t output_dim);

// One seeded N(0, 1) token per class.
ClassTokens make_toy_class_tokens(std::uint64_t seed, std::size_t num_classes, std::size_t token_dim);

// Zero-shot class embeddings: each class encoded behind an all-zero prompt of
// prompt_tokens tokens.
std::vector<std::vector<double>> zero_shot_anchors(const TextEncoder& encoder, const ClassTokens& class_tokens,
                                                   std::size_t prompt_tokens);

// Entries i.i.d. N(0, 0.02^2), global prompts drawn before local ones.
PromptSet init_prompts(std::uint64_t seed, std::size_t m, std::size_t n, std::size_t tokens,
                       std::size_t token_dim);

inline constexpr double kPromptInitStd = 0.02;

}  // namespace gallop

#endif  // GALLOP_PROMPT_ENCODER_HPP
