#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "headprobe/tokenizer.hpp"

namespace headprobe {

// Rows are token positions.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int n_layers = 6;
  int n_heads = 8;
  int model_dim = 128;
  int head_dim = 16;
  int mlp_hidden_dim = 256;
  int vocab_size = kByteVocabSize;
  int max_context = 512;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  std::uint64_t seed = 42;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Projection : std::uint8_t { Q, K, V, O, Gate, Up, Down };
inline constexpr std::size_t kNumProjections = 7;
inline constexpr std::array<Projection, kNumProjections> kAllProjections{
    Projection::Q, Projection::K, Projection::V, Projection::O,
    Projection::Gate, Projection::Up, Projection::Down};

std::string_view projection_name(Projection p);
Projection parse_projection(std::string_view name);

struct LoraConfig {
  int rank = 8;
  double alpha = 32.0;
  double dropout = 0.1;
  std::vector<Projection> targets{kAllProjections.begin(), kAllProjections.end()};
  std::uint64_t seed = 42;

  double scale() const { return alpha / rank; }
  void validate() const;
  bool operator==(const LoraConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 10;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 42;
  unsigned workers = 1;  // gradient workers; results do not depend on it

  void validate() const;
};

/// y = x W^T, plus (alpha/r) * (x A^T) B^T when an adapter is attached.
struct LoraAdapter {
  Matrix a;  // rank x in
  Matrix b;  // out x rank
  double scale = 1.0;
  double dropout = 0.0;
};

struct LinearLayer {
  Matrix weight;  // out x in
  std::optional<LoraAdapter> adapter;

  Eigen::Index in_features() const { return weight.cols(); }
  Eigen::Index out_features() const { return weight.rows(); }
  /// Evaluation-mode forward (no dropout).
  Matrix apply(const Matrix& x) const;
};

struct TransformerBlock {
  Vector attn_norm;
  Vector mlp_norm;
  std::array<LinearLayer, kNumProjections> proj;

  LinearLayer& operator[](Projection p) { return proj[static_cast<std::size_t>(p)]; }
  const LinearLayer& operator[](Projection p) const { return proj[static_cast<std::size_t>(p)]; }
};

/// Final-token activations. head_pre_proj row l is the concatenation of
/// every head's attention-weighted value vector at layer l, captured
/// before the output projection.
struct TapBundle {
  Matrix head_pre_proj;       // n_layers x (n_heads * head_dim)
  Matrix post_attn_residual;  // n_layers x model_dim
  Matrix post_mlp_residual;   // n_layers x model_dim

  auto head(int layer, int head, int head_dim) const {
    return head_pre_proj.row(layer).segment(static_cast<Eigen::Index>(head) * head_dim, head_dim);
  }
};

struct ForwardOptions {
  std::optional<std::size_t> position;  // defaults to the last token
  bool keep_attention = false;
};

struct ForwardResult {
  Vector logits;  // at the tapped position
  TapBundle taps;
  Matrix residual_in;  // n_layers x model_dim: residual entering each layer at the tapped position
  std::vector<Matrix> attention;  // [layer * n_heads + head], T x T, when requested
};

/// Pre-norm decoder-only transformer: RMS norm, rotary positions,
/// multi-head causal attention and a gated SiLU MLP. All arithmetic is
/// 64-bit.
struct MicroTransformer {
  ModelConfig config;
  Matrix embedding;  // vocab x model_dim
  std::vector<TransformerBlock> blocks;
  Vector final_norm;
  Matrix lm_head;  // vocab x model_dim
  std::optional<LoraConfig> lora;

  /// Seeded Gaussian initialization scaled by 1/sqrt(fan_in).
  static MicroTransformer initialize(const ModelConfig& cfg);

  std::string name() const;
};

ForwardResult forward_with_taps(const MicroTransformer& model, std::span<const Token> tokens,
                                const ForwardOptions& options = {});

/// Returns a copy of `model` with adapters attached to every target
/// projection: A seeded Gaussian, B zero. Throws InvalidArgument when
/// rank >= min(in, out) for any target.
MicroTransformer apply_lora(const MicroTransformer& model, const LoraConfig& cfg);

/// Gradients for one adapter; empty when the projection has none.
struct AdapterGrad {
  Matrix a;
  Matrix b;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<AdapterGrad> grads;  // index: layer * kNumProjections + projection
};

/// Dropout on adapter inputs, active during training only.
struct DropoutContext {
  std::uint64_t seed = 0;
};

/// Cross-entropy of `target` at the final position, with gradients for
/// every attached adapter.
LossAndGrad answer_loss_and_gradients(const MicroTransformer& model, std::span<const Token> tokens,
                                      Token target, const DropoutContext* dropout = nullptr);
double answer_loss(const MicroTransformer& model, std::span<const Token> tokens, Token target);

struct LabeledText {
  std::string text;
  int label = 0;  // 1 -> "high", 0 -> "low"
};

inline Token answer_token(int label) { return label == 1 ? kHighToken : kLowToken; }

/// Mean answer loss over a dataset in evaluation mode.
double mean_answer_loss(const MicroTransformer& model, std::span<const LabeledText> data,
                        unsigned workers = 1);

/// Linear warmup over the first warmup_fraction of steps, then cosine
/// decay reaching zero after the last step.
double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

struct TrainResult {
  MicroTransformer model;
  std::vector<double> epoch_losses;  // mean training-mode loss per epoch
  std::size_t steps = 0;
};

/// Adam on adapter parameters only; every other parameter is left
/// bit-identical. Throws NumericalError naming the step on a non-finite
/// loss.
TrainResult train_lora(MicroTransformer model, std::span<const LabeledText> data,
                       const TrainConfig& cfg);

struct Classification {
  int label = 0;  // 1 high, 0 low
  double logit_high = 0.0;
  double logit_low = 0.0;
};

/// Argmax over the two answer-token logits; ties go to "low".
Classification classify_logits(double logit_high, double logit_low);
Classification classify(const MicroTransformer& model, std::string_view review);

}  // namespace headprobe
