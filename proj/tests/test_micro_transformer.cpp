#include <cmath>
#include <cstring>

#include "doctest.h"
#include "headprobe/checkpoint.hpp"
#include "headprobe/common.hpp"
#include "headprobe/fixtures.hpp"
#include "headprobe/micro_transformer.hpp"

using namespace headprobe;

namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool bitwise_equal(const TapBundle& a, const TapBundle& b) {
  return bitwise_equal(a.head_pre_proj, b.head_pre_proj) && bitwise_equal(a.post_attn_residual, b.post_attn_residual) &&
         bitwise_equal(a.post_mlp_residual, b.post_mlp_residual);
}

std::vector<Token> sample_tokens(std::size_t n, std::uint64_t seed) {
  std::vector<Token> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Token>(mix64(seed + i) % 256);
  return t;
}

const MicroTransformer& small_model() {
  static const MicroTransformer m = MicroTransformer::initialize(small_model_config(17));
  return m;
}

}  // namespace

TEST_CASE("default config matches the desk-scale architecture") {
  ModelConfig cfg;
  CHECK(cfg.n_layers == 6);
  CHECK(cfg.n_heads == 8);
  CHECK(cfg.model_dim == 128);
  CHECK(cfg.head_dim == 16);
  CHECK(cfg.mlp_hidden_dim == 256);
  CHECK_NOTHROW(cfg.validate());
  cfg.head_dim = 15;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.max_context = 7;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("forward pass is deterministic") {
  auto tokens = sample_tokens(40, 1);
  auto a = forward_with_taps(small_model(), tokens);
  auto b = forward_with_taps(small_model(), tokens);
  CHECK(bitwise_equal(a.taps, b.taps));
  CHECK(std::memcmp(a.logits.data(), b.logits.data(), a.logits.size() * sizeof(double)) == 0);
  auto again = MicroTransformer::initialize(small_model_config(17));
  CHECK(bitwise_equal(forward_with_taps(again, tokens).taps, a.taps));
}

TEST_CASE("taps at a position ignore later tokens") {
  auto tokens = sample_tokens(60, 2);
  for (std::size_t t : {0u, 7u, 33u}) {
    std::vector<Token> prefix(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(t + 1));
    auto short_run = forward_with_taps(small_model(), prefix);
    auto long_run = forward_with_taps(small_model(), tokens, {.position = t});
    CHECK(bitwise_equal(short_run.taps, long_run.taps));
    CHECK(std::memcmp(short_run.logits.data(), long_run.logits.data(), short_run.logits.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("residual taps chain from layer to layer") {
  auto r = forward_with_taps(small_model(), sample_tokens(25, 3));
  for (int l = 0; l + 1 < small_model().config.n_layers; ++l) {
    CHECK(bitwise_equal(Matrix(r.taps.post_mlp_residual.row(l)), Matrix(r.residual_in.row(l + 1))));
  }
}

TEST_CASE("head taps reconstruct the attention block output") {
  const auto& m = small_model();
  auto r = forward_with_taps(m, sample_tokens(30, 4));
  for (int l = 0; l < m.config.n_layers; ++l) {
    Matrix concat(1, m.config.model_dim);
    for (int h = 0; h < m.config.n_heads; ++h) {
      concat.block(0, static_cast<Eigen::Index>(h) * m.config.head_dim, 1, m.config.head_dim) =
          r.taps.head(l, h, m.config.head_dim);
    }
    Matrix block_out = m.blocks[l][Projection::O].apply(concat);
    Matrix expected = r.taps.post_attn_residual.row(l) - r.residual_in.row(l);
    CHECK((block_out - expected).norm() <= 1e-5 * expected.norm());
  }
}

TEST_CASE("attention rows are causal distributions") {
  const auto& m = small_model();
  auto r = forward_with_taps(m, sample_tokens(20, 5), {.keep_attention = true});
  REQUIRE(r.attention.size() == static_cast<std::size_t>(m.config.n_layers * m.config.n_heads));
  for (const auto& p : r.attention) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-6);
      for (Eigen::Index j = i + 1; j < p.cols(); ++j) CHECK(p(i, j) == 0.0);
    }
  }
}

TEST_CASE("one-head model matches hand-evaluated attention") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.head_dim = 2;
  cfg.model_dim = 2;
  cfg.mlp_hidden_dim = 1;
  cfg.max_context = 8;
  auto m = MicroTransformer::initialize(cfg);
  m.embedding.setZero();
  m.embedding(0, 0) = 1.0;
  m.embedding(1, 1) = 1.0;
  auto& b = m.blocks[0];
  for (auto p : {Projection::Q, Projection::K, Projection::V, Projection::O}) b[p].weight = Matrix::Identity(2, 2);
  for (auto p : {Projection::Gate, Projection::Up, Projection::Down}) b[p].weight.setZero();

  const std::vector<Token> tokens{0, 1};
  auto r = forward_with_taps(m, tokens);

  // RMS-normalised one-hot rows have magnitude a; position 1 is rotated by 1 radian.
  const double a = 1.0 / std::sqrt(0.5 + cfg.norm_eps);
  const double q1x = -a * std::sin(1.0), q1y = a * std::cos(1.0);
  const double s0 = (q1x * a) / std::sqrt(2.0);               // q1 . k0 / sqrt(d)
  const double s1 = (q1x * q1x + q1y * q1y) / std::sqrt(2.0);  // q1 . k1 / sqrt(d)
  const double p0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const double p1 = 1.0 - p0;
  const double out0 = p0 * a;  // v0 = [a, 0], v1 = [0, a]
  const double out1 = p1 * a;

  CHECK(r.taps.head_pre_proj(0, 0) == doctest::Approx(out0).epsilon(1e-12));
  CHECK(r.taps.head_pre_proj(0, 1) == doctest::Approx(out1).epsilon(1e-12));
  CHECK(r.taps.post_attn_residual(0, 0) == doctest::Approx(out0).epsilon(1e-12));
  CHECK(r.taps.post_attn_residual(0, 1) == doctest::Approx(1.0 + out1).epsilon(1e-12));
  CHECK(bitwise_equal(Matrix(r.taps.post_mlp_residual), Matrix(r.taps.post_attn_residual)));
}

TEST_CASE("forward errors") {
  const auto& m = small_model();
  CHECK_THROWS_AS(forward_with_taps(m, std::vector<Token>{}), InvalidArgument);
  CHECK_THROWS_WITH(forward_with_taps(m, std::vector<Token>{1, 258}), doctest::Contains("outside the vocabulary"));
  CHECK_THROWS_AS(forward_with_taps(m, std::vector<Token>(static_cast<std::size_t>(m.config.max_context) + 1, 3)),
                  InvalidArgument);
}

TEST_CASE("classify argmax with low tie-break") {
  CHECK(classify_logits(2.0, 1.0).label == 1);
  CHECK(classify_logits(1.0, 2.0).label == 0);
  CHECK(classify_logits(1.5, 1.5).label == 0);
  auto c = classify(small_model(), "Solid kettle, arrived on time.");
  CHECK((c.label == 0 || c.label == 1));
  CHECK(c.label == (c.logit_high > c.logit_low ? 1 : 0));
}

TEST_CASE("model checkpoint round trip is exact") {
  std::stringstream ss;
  write_model(small_model(), ss);
  auto back = read_model(ss);
  CHECK(back.config == small_model().config);
  auto tokens = sample_tokens(12, 9);
  CHECK(bitwise_equal(forward_with_taps(back, tokens).taps, forward_with_taps(small_model(), tokens).taps));

  std::stringstream bad("HPRB....");
  CHECK_THROWS_AS(read_model(bad), FormatError);
}
