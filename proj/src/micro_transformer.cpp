#include "headprobe/micro_transformer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "headprobe/common.hpp"

namespace headprobe {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || model_dim < 1 || head_dim < 1 || mlp_hidden_dim < 1 ||
      vocab_size < 1) {
    throw InvalidArgument("model config counts must all be >= 1");
  }
  if (model_dim != n_heads * head_dim) {
    throw InvalidArgument("model_dim (" + std::to_string(model_dim) + ") must equal n_heads * head_dim (" +
                          std::to_string(n_heads * head_dim) + ")");
  }
  if (head_dim % 2 != 0) throw InvalidArgument("head_dim must be even for rotary encoding");
  if (max_context < 8) throw InvalidArgument("max_context must be >= 8");
  if (vocab_size < kByteVocabSize) {
    throw InvalidArgument("vocab_size must cover the byte tokenizer (" + std::to_string(kByteVocabSize) + ")");
  }
}

std::string_view projection_name(Projection p) {
  switch (p) {
    case Projection::Q: return "q";
    case Projection::K: return "k";
    case Projection::V: return "v";
    case Projection::O: return "o";
    case Projection::Gate: return "gate";
    case Projection::Up: return "up";
    case Projection::Down: return "down";
  }
  return "?";
}

Projection parse_projection(std::string_view name) {
  for (auto p : kAllProjections) {
    if (projection_name(p) == name) return p;
  }
  throw InvalidArgument("unknown projection: " + std::string(name));
}

void LoraConfig::validate() const {
  if (rank < 1) throw InvalidArgument("LoRA rank must be >= 1");
  if (!(alpha > 0.0)) throw InvalidArgument("LoRA alpha must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("LoRA dropout must be in [0, 1)");
  if (targets.empty()) throw InvalidArgument("LoRA needs at least one target projection");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw InvalidArgument("warmup fraction must be in [0, 1)");
  }
}

namespace {

// Row-at-a-time product x W^T. Each output row depends only on its input
// row, so a position's value never changes with sequence length (GEMM
// blocking would otherwise vary the summation order).
Matrix rowwise_product(const Matrix& x, const Matrix& w) {
  Matrix y(x.rows(), w.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) y.row(i).noalias() = x.row(i) * w.transpose();
  return y;
}

}  // namespace

Matrix LinearLayer::apply(const Matrix& x) const {
  Matrix y = rowwise_product(x, weight);
  if (adapter) y.noalias() += adapter->scale * rowwise_product(rowwise_product(x, adapter->a), adapter->b);
  return y;
}

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix init_weight(Eigen::Index out, Eigen::Index in, std::uint64_t seed) {
  return gaussian(out, in, 1.0 / std::sqrt(static_cast<double>(in)), seed);
}

// Per-call Bernoulli masks for adapter dropout, pre-scaled by 1/(1-p).
class DropoutStream {
 public:
  explicit DropoutStream(std::uint64_t seed) : rng_(seed) {}
  Matrix mask(Eigen::Index rows, Eigen::Index cols, double p) {
    std::bernoulli_distribution keep(1.0 - p);
    const double kept = 1.0 / (1.0 - p);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng_) ? kept : 0.0;
    return m;
  }

 private:
  std::mt19937_64 rng_;
};

struct LinearCache {
  Matrix x_dropped;
  Matrix xa;
  Matrix mask;  // empty without dropout
};

struct LayerCache {
  Matrix x_in;
  Vector inv_rms1;
  Matrix h1;
  Matrix q, k, v;  // q and k after rotary encoding
  std::vector<Matrix> probs;
  Matrix attn_cat;
  Matrix x_mid;
  Vector inv_rms2;
  Matrix h2;
  Matrix gate, up, act;
  std::array<LinearCache, kNumProjections> lin;
};

Matrix linear_forward(const LinearLayer& layer, const Matrix& x, LinearCache* cache,
                      DropoutStream* drop) {
  Matrix y = rowwise_product(x, layer.weight);
  if (!layer.adapter) return y;
  const auto& ad = *layer.adapter;
  Matrix mask;
  if (drop != nullptr && ad.dropout > 0.0) mask = drop->mask(x.rows(), x.cols(), ad.dropout);
  Matrix xd = mask.size() ? Matrix(x.cwiseProduct(mask)) : x;
  Matrix xa = rowwise_product(xd, ad.a);
  y.noalias() += ad.scale * rowwise_product(xa, ad.b);
  if (cache != nullptr) {
    cache->x_dropped = std::move(xd);
    cache->xa = std::move(xa);
    cache->mask = std::move(mask);
  }
  return y;
}

Matrix linear_backward(const LinearLayer& layer, const LinearCache& cache, const Matrix& dy,
                       AdapterGrad* grad) {
  Matrix dx = dy * layer.weight;
  if (!layer.adapter) return dx;
  const auto& ad = *layer.adapter;
  Matrix dxa = ad.scale * (dy * ad.b);
  grad->b.noalias() += ad.scale * (dy.transpose() * cache.xa);
  grad->a.noalias() += dxa.transpose() * cache.x_dropped;
  Matrix dxd = dxa * ad.a;
  if (cache.mask.size()) dxd = dxd.cwiseProduct(cache.mask);
  dx += dxd;
  return dx;
}

Matrix rms_norm(const Matrix& x, const Vector& gain, double eps, Vector* inv_rms_out) {
  const auto d = static_cast<double>(x.cols());
  Vector inv_rms(x.rows());
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    inv_rms(i) = 1.0 / std::sqrt(x.row(i).squaredNorm() / d + eps);
    y.row(i) = (x.row(i).array() * inv_rms(i) * gain.transpose().array()).matrix();
  }
  if (inv_rms_out != nullptr) *inv_rms_out = std::move(inv_rms);
  return y;
}

Matrix rms_norm_backward(const Matrix& x, const Vector& gain, const Vector& inv_rms, const Matrix& dy) {
  const auto d = static_cast<double>(x.cols());
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::RowVectorXd gy = dy.row(i).cwiseProduct(gain.transpose());
    const double r = inv_rms(i);
    const double dot = gy.dot(x.row(i));
    dx.row(i) = r * gy - (r * r * r * dot / d) * x.row(i);
  }
  return dx;
}

// Rotates (2i, 2i+1) pairs of each head by pos * base^(-2i/head_dim).
// `inverse` applies the transpose rotation, used by the backward pass.
void apply_rotary(Matrix& m, int n_heads, int head_dim, double base, bool inverse) {
  const int half = head_dim / 2;
  std::vector<double> freq(half);
  for (int i = 0; i < half; ++i) freq[i] = std::pow(base, -2.0 * i / head_dim);
  for (Eigen::Index pos = 0; pos < m.rows(); ++pos) {
    for (int i = 0; i < half; ++i) {
      const double angle = static_cast<double>(pos) * freq[i];
      const double c = std::cos(angle);
      const double s = inverse ? -std::sin(angle) : std::sin(angle);
      for (int h = 0; h < n_heads; ++h) {
        const Eigen::Index j = static_cast<Eigen::Index>(h) * head_dim + 2 * i;
        const double x0 = m(pos, j);
        const double x1 = m(pos, j + 1);
        m(pos, j) = x0 * c - x1 * s;
        m(pos, j + 1) = x0 * s + x1 * c;
      }
    }
  }
}

double silu(double z) { return z / (1.0 + std::exp(-z)); }

struct RunOutput {
  Matrix x_final;  // residual after the last block, T x D
  std::vector<LayerCache> caches;
};

// Runs all blocks. Taps at `tap_row` are written into `taps` if given.
RunOutput run_blocks(const MicroTransformer& model, std::span<const Token> tokens, bool keep_cache,
                     DropoutStream* drop, ForwardResult* taps, Eigen::Index tap_row,
                     bool keep_attention) {
  const auto& cfg = model.config;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const int H = cfg.n_heads;
  const int hd = cfg.head_dim;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix x(T, cfg.model_dim);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = model.embedding.row(tokens[static_cast<std::size_t>(t)]);
  if (taps != nullptr) {
    taps->residual_in.resize(cfg.n_layers, cfg.model_dim);
    taps->taps.head_pre_proj.resize(cfg.n_layers, cfg.model_dim);
    taps->taps.post_attn_residual.resize(cfg.n_layers, cfg.model_dim);
    taps->taps.post_mlp_residual.resize(cfg.n_layers, cfg.model_dim);
  }

  RunOutput out;
  if (keep_cache) out.caches.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& block = model.blocks[l];
    LayerCache local;
    LayerCache& c = keep_cache ? out.caches[l] : local;
    auto lin = [&](Projection p) { return keep_cache ? &c.lin[static_cast<std::size_t>(p)] : nullptr; };

    c.x_in = x;
    if (taps != nullptr) taps->residual_in.row(l) = x.row(tap_row);
    c.h1 = rms_norm(x, block.attn_norm, cfg.norm_eps, &c.inv_rms1);
    c.q = linear_forward(block[Projection::Q], c.h1, lin(Projection::Q), drop);
    c.k = linear_forward(block[Projection::K], c.h1, lin(Projection::K), drop);
    c.v = linear_forward(block[Projection::V], c.h1, lin(Projection::V), drop);
    apply_rotary(c.q, H, hd, cfg.rope_base, false);
    apply_rotary(c.k, H, hd, cfg.rope_base, false);

    c.attn_cat.resize(T, cfg.model_dim);
    c.probs.resize(H);
    for (int h = 0; h < H; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * hd;
      Matrix scores = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double* qi = c.q.data() + i * c.q.cols() + off;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double* kj = c.k.data() + j * c.k.cols() + off;
          double dot = 0.0;
          for (int e = 0; e < hd; ++e) dot += qi[e] * kj[e];
          scores(i, j) = dot * inv_sqrt_hd;
        }
        const double row_max = scores.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          scores(i, j) = std::exp(scores(i, j) - row_max);
          sum += scores(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) /= sum;
        for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = 0.0;
      }
      for (Eigen::Index i = 0; i < T; ++i) {
        double* out_row = c.attn_cat.data() + i * c.attn_cat.cols() + off;
        std::fill(out_row, out_row + hd, 0.0);
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double p = scores(i, j);
          const double* vj = c.v.data() + j * c.v.cols() + off;
          for (int e = 0; e < hd; ++e) out_row[e] += p * vj[e];
        }
      }
      if (taps != nullptr && keep_attention) taps->attention.push_back(scores);
      c.probs[h] = std::move(scores);
    }

    c.x_mid = x + linear_forward(block[Projection::O], c.attn_cat, lin(Projection::O), drop);
    c.h2 = rms_norm(c.x_mid, block.mlp_norm, cfg.norm_eps, &c.inv_rms2);
    c.gate = linear_forward(block[Projection::Gate], c.h2, lin(Projection::Gate), drop);
    c.up = linear_forward(block[Projection::Up], c.h2, lin(Projection::Up), drop);
    c.act = c.gate.unaryExpr([](double z) { return silu(z); }).cwiseProduct(c.up);
    x = c.x_mid + linear_forward(block[Projection::Down], c.act, lin(Projection::Down), drop);

    if (taps != nullptr) {
      taps->taps.head_pre_proj.row(l) = c.attn_cat.row(tap_row);
      taps->taps.post_attn_residual.row(l) = c.x_mid.row(tap_row);
      taps->taps.post_mlp_residual.row(l) = x.row(tap_row);
    }
  }
  out.x_final = std::move(x);
  return out;
}

void check_tokens(const MicroTransformer& model, std::span<const Token> tokens) {
  if (tokens.empty()) throw InvalidArgument("forward pass needs at least one token");
  if (tokens.size() > static_cast<std::size_t>(model.config.max_context)) {
    throw InvalidArgument("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_context " +
                          std::to_string(model.config.max_context));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= model.config.vocab_size) {
      throw InvalidArgument("token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                            " is outside the vocabulary of " + std::to_string(model.config.vocab_size));
    }
  }
}

Vector final_logits(const MicroTransformer& model, const Matrix& x_row, double* inv_rms_out = nullptr,
                    Matrix* normed_out = nullptr) {
  Vector inv_rms;
  Matrix normed = rms_norm(x_row, model.final_norm, model.config.norm_eps, &inv_rms);
  Vector logits = model.lm_head * normed.row(0).transpose();
  if (inv_rms_out != nullptr) *inv_rms_out = inv_rms(0);
  if (normed_out != nullptr) *normed_out = std::move(normed);
  return logits;
}

double cross_entropy(const Vector& logits, Token target, Vector* probs_out) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  const double z = e.sum();
  if (probs_out != nullptr) *probs_out = e / z;
  return -(logits(target) - m - std::log(z));
}

}  // namespace

MicroTransformer MicroTransformer::initialize(const ModelConfig& cfg) {
  cfg.validate();
  MicroTransformer m;
  m.config = cfg;
  const auto D = cfg.model_dim;
  const auto F = cfg.mlp_hidden_dim;
  m.embedding = init_weight(cfg.vocab_size, D, derive_seed(cfg.seed, "embedding"));
  m.blocks.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& b = m.blocks[l];
    b.attn_norm = Vector::Ones(D);
    b.mlp_norm = Vector::Ones(D);
    for (auto p : kAllProjections) {
      Eigen::Index out = D, in = D;
      if (p == Projection::Gate || p == Projection::Up) out = F;
      if (p == Projection::Down) in = F;
      b[p].weight = init_weight(out, in, derive_seed(cfg.seed, static_cast<std::uint64_t>(l) + 1,
                                                     static_cast<std::uint64_t>(p) + 1));
    }
  }
  m.final_norm = Vector::Ones(D);
  m.lm_head = init_weight(cfg.vocab_size, D, derive_seed(cfg.seed, "lm_head"));
  return m;
}

std::string MicroTransformer::name() const {
  return "micro-L" + std::to_string(config.n_layers) + "H" + std::to_string(config.n_heads) + "D" +
         std::to_string(config.model_dim) + "-s" + std::to_string(config.seed) + (lora ? "-lora" : "");
}

ForwardResult forward_with_taps(const MicroTransformer& model, std::span<const Token> tokens,
                                const ForwardOptions& options) {
  check_tokens(model, tokens);
  const std::size_t pos = options.position.value_or(tokens.size() - 1);
  if (pos >= tokens.size()) throw InvalidArgument("tap position beyond the sequence");
  ForwardResult result;
  auto run = run_blocks(model, tokens, false, nullptr, &result, static_cast<Eigen::Index>(pos),
                        options.keep_attention);
  result.logits = final_logits(model, run.x_final.row(static_cast<Eigen::Index>(pos)));
  return result;
}

MicroTransformer apply_lora(const MicroTransformer& model, const LoraConfig& cfg) {
  cfg.validate();
  MicroTransformer out = model;
  out.lora = cfg;
  for (int l = 0; l < model.config.n_layers; ++l) {
    for (auto p : cfg.targets) {
      auto& layer = out.blocks[l][p];
      const auto in = layer.in_features();
      const auto o = layer.out_features();
      if (cfg.rank >= std::min(in, o)) {
        throw InvalidArgument("LoRA rank " + std::to_string(cfg.rank) + " is not below min(in, out) = " +
                              std::to_string(std::min(in, o)) + " for projection " +
                              std::string(projection_name(p)));
      }
      LoraAdapter ad;
      ad.a = init_weight(cfg.rank, in, derive_seed(cfg.seed, static_cast<std::uint64_t>(l) + 101,
                                                   static_cast<std::uint64_t>(p) + 1));
      ad.b = Matrix::Zero(o, cfg.rank);
      ad.scale = cfg.scale();
      ad.dropout = cfg.dropout;
      layer.adapter = std::move(ad);
    }
  }
  return out;
}

LossAndGrad answer_loss_and_gradients(const MicroTransformer& model, std::span<const Token> tokens,
                                      Token target, const DropoutContext* dropout) {
  check_tokens(model, tokens);
  const auto& cfg = model.config;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const int H = cfg.n_heads;
  const int hd = cfg.head_dim;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  std::optional<DropoutStream> drop;
  if (dropout != nullptr) drop.emplace(dropout->seed);
  auto run = run_blocks(model, tokens, true, drop ? &*drop : nullptr, nullptr, 0, false);

  LossAndGrad out;
  out.grads.resize(static_cast<std::size_t>(cfg.n_layers) * kNumProjections);
  for (int l = 0; l < cfg.n_layers; ++l) {
    for (auto p : kAllProjections) {
      const auto& layer = model.blocks[l][p];
      if (!layer.adapter) continue;
      auto& g = out.grads[static_cast<std::size_t>(l) * kNumProjections + static_cast<std::size_t>(p)];
      g.a = Matrix::Zero(layer.adapter->a.rows(), layer.adapter->a.cols());
      g.b = Matrix::Zero(layer.adapter->b.rows(), layer.adapter->b.cols());
    }
  }

  Matrix last = run.x_final.row(T - 1);
  double inv_rms_f = 0.0;
  Vector logits = final_logits(model, last, &inv_rms_f);
  Vector probs;
  out.loss = cross_entropy(logits, target, &probs);

  Vector dlogits = probs;
  dlogits(target) -= 1.0;
  Matrix dnormed = (model.lm_head.transpose() * dlogits).transpose();
  Vector inv_rms_vec(1);
  inv_rms_vec(0) = inv_rms_f;
  Matrix dx = Matrix::Zero(T, cfg.model_dim);
  dx.row(T - 1) = rms_norm_backward(last, model.final_norm, inv_rms_vec, dnormed);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& block = model.blocks[l];
    const auto& c = run.caches[l];
    auto grad = [&](Projection p) {
      return &out.grads[static_cast<std::size_t>(l) * kNumProjections + static_cast<std::size_t>(p)];
    };
    auto cache = [&](Projection p) -> const LinearCache& { return c.lin[static_cast<std::size_t>(p)]; };

    // MLP branch.
    Matrix dact = linear_backward(block[Projection::Down], cache(Projection::Down), dx, grad(Projection::Down));
    Matrix dgate(T, cfg.mlp_hidden_dim);
    Matrix dup(T, cfg.mlp_hidden_dim);
    for (Eigen::Index i = 0; i < dgate.size(); ++i) {
      const double z = c.gate.data()[i];
      const double sig = 1.0 / (1.0 + std::exp(-z));
      dup.data()[i] = dact.data()[i] * z * sig;
      dgate.data()[i] = dact.data()[i] * c.up.data()[i] * sig * (1.0 + z * (1.0 - sig));
    }
    Matrix dh2 = linear_backward(block[Projection::Gate], cache(Projection::Gate), dgate, grad(Projection::Gate));
    dh2 += linear_backward(block[Projection::Up], cache(Projection::Up), dup, grad(Projection::Up));
    Matrix dx_mid = dx + rms_norm_backward(c.x_mid, block.mlp_norm, c.inv_rms2, dh2);

    // Attention branch.
    Matrix dcat = linear_backward(block[Projection::O], cache(Projection::O), dx_mid, grad(Projection::O));
    Matrix dq(T, cfg.model_dim), dk(T, cfg.model_dim), dv(T, cfg.model_dim);
    for (int h = 0; h < H; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * hd;
      const Matrix& P = c.probs[h];
      Matrix dout = dcat.middleCols(off, hd);
      Matrix dP = dout * c.v.middleCols(off, hd).transpose();
      dv.middleCols(off, hd) = P.transpose() * dout;
      Matrix dS(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double row_dot = dP.row(i).dot(P.row(i));
        dS.row(i) = (P.row(i).array() * (dP.row(i).array() - row_dot)).matrix() * inv_sqrt_hd;
      }
      dq.middleCols(off, hd) = dS * c.k.middleCols(off, hd);
      dk.middleCols(off, hd) = dS.transpose() * c.q.middleCols(off, hd);
    }
    apply_rotary(dq, H, hd, cfg.rope_base, true);
    apply_rotary(dk, H, hd, cfg.rope_base, true);
    Matrix dh1 = linear_backward(block[Projection::Q], cache(Projection::Q), dq, grad(Projection::Q));
    dh1 += linear_backward(block[Projection::K], cache(Projection::K), dk, grad(Projection::K));
    dh1 += linear_backward(block[Projection::V], cache(Projection::V), dv, grad(Projection::V));
    dx = dx_mid + rms_norm_backward(c.x_in, block.attn_norm, c.inv_rms1, dh1);
  }
  return out;
}

double answer_loss(const MicroTransformer& model, std::span<const Token> tokens, Token target) {
  auto fwd = forward_with_taps(model, tokens);
  return cross_entropy(fwd.logits, target, nullptr);
}

Classification classify_logits(double logit_high, double logit_low) {
  return Classification{logit_high > logit_low ? 1 : 0, logit_high, logit_low};
}

Classification classify(const MicroTransformer& model, std::string_view review) {
  auto prompt = format_prompt(review, static_cast<std::size_t>(model.config.max_context));
  auto fwd = forward_with_taps(model, prompt.tokens);
  return classify_logits(fwd.logits(kHighToken), fwd.logits(kLowToken));
}

}  // namespace headprobe
