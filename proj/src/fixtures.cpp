#include "headprobe/fixtures.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <random>
#include <string>

#include "headprobe/common.hpp"

namespace headprobe {

namespace {

std::vector<int> balanced_labels(std::size_t n, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < n / 2 ? 1 : 0;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

std::vector<std::string> numbered_ids(std::size_t n) {
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
  return ids;
}

}  // namespace

PlantedFixture make_planted_heads(const PlantedHeadSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  PlantedFixture fx;
  fx.labels = balanced_labels(spec.n_samples, rng);
  auto& a = fx.acts;
  a.model_name = "planted-heads";
  a.tap = TapKind::HeadPreProjection;
  a.n_samples = spec.n_samples;
  a.n_layers = static_cast<std::uint32_t>(spec.n_layers);
  a.n_heads = static_cast<std::uint32_t>(spec.n_heads);
  a.dim = static_cast<std::uint32_t>(spec.dim);
  a.sample_ids = numbered_ids(spec.n_samples);
  a.data.resize(spec.n_samples * a.n_layers * a.n_heads * a.dim);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise));
  for (auto& v : a.data) v = noise(rng);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    if (fx.labels[i] != 1) continue;
    auto vec = a.vector_at(i, spec.planted.layer, spec.planted.head);
    for (int k = 0; k < spec.shifted_dims; ++k) vec[k] += static_cast<float>(spec.shift);
  }
  return fx;
}

PlantedFixture make_planted_residual(const PlantedResidualSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  PlantedFixture fx;
  fx.labels = balanced_labels(spec.n_samples, rng);
  auto& a = fx.acts;
  a.model_name = "planted-residual";
  a.tap = spec.tap;
  a.n_samples = spec.n_samples;
  a.n_layers = static_cast<std::uint32_t>(spec.n_layers);
  a.n_heads = 1;
  a.dim = static_cast<std::uint32_t>(spec.dim);
  a.sample_ids = numbered_ids(spec.n_samples);
  a.data.resize(spec.n_samples * a.n_layers * a.dim);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise));
  for (auto& v : a.data) v = noise(rng);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    if (fx.labels[i] != 1) continue;
    for (int l = spec.first_signal_layer; l < spec.n_layers; ++l) {
      auto vec = a.vector_at(i, l);
      for (int k = 0; k < spec.shifted_dims; ++k) vec[k] += static_cast<float>(spec.shift);
    }
  }
  return fx;
}

FeatureFixture make_xor_fixture(std::size_t n, int dim, double cluster_noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  FeatureFixture fx;
  fx.x.resize(static_cast<Eigen::Index>(n), dim);
  fx.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int a = static_cast<int>(i % 2);
    const int b = static_cast<int>((i / 2) % 2);
    const auto r = static_cast<Eigen::Index>(i);
    fx.x(r, 0) = (a ? 1.0 : -1.0) + cluster_noise * gauss(rng);
    fx.x(r, 1) = (b ? 1.0 : -1.0) + cluster_noise * gauss(rng);
    for (int k = 2; k < dim; ++k) fx.x(r, k) = gauss(rng);
    fx.y[i] = a ^ b;
  }
  return fx;
}

FeatureFixture make_linear_fixture(std::size_t n, int dim, int shifted_dims, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  FeatureFixture fx;
  fx.y = balanced_labels(n, rng);
  fx.x.resize(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) {
      double v = gauss(rng);
      if (fx.y[i] == 1 && k < shifted_dims) v += shift;
      fx.x(static_cast<Eigen::Index>(i), k) = v;
    }
  }
  return fx;
}

GradedConstructFixture make_graded_constructs(std::size_t n_samples, int dim, std::uint64_t seed) {
  constexpr int kLayers = 4;
  constexpr int kHeads = 8;
  static_assert(kLayers * kHeads == kNumConstructs);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 1.0f);

  GradedConstructFixture fx;
  for (std::size_t c = 0; c < kNumConstructs; ++c) fx.strengths.push_back(0.3 + 0.1 * static_cast<double>(c));

  std::vector<std::vector<int>> labels(kNumConstructs);
  for (auto& l : labels) l = balanced_labels(n_samples, rng);

  auto& a = fx.acts;
  a.model_name = "graded-constructs";
  a.tap = TapKind::HeadPreProjection;
  a.n_samples = n_samples;
  a.n_layers = kLayers;
  a.n_heads = kHeads;
  a.dim = static_cast<std::uint32_t>(dim);
  a.sample_ids = numbered_ids(n_samples);
  a.data.resize(n_samples * kLayers * kHeads * a.dim);
  for (auto& v : a.data) v = noise(rng);
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t c = 0; c < kNumConstructs; ++c) {
      if (labels[c][i] == 1) {
        a.vector_at(i, c / kHeads, c % kHeads)[0] += static_cast<float>(fx.strengths[c]);
      }
    }
  }

  std::vector<LabelRecord> records(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    records[i].id = a.sample_ids[i];
    records[i].text = "synthetic";
    for (std::size_t c = 0; c < kNumConstructs; ++c) {
      records[i].raw[c] = labels[c][i] == 1 ? 4 : 2;
      records[i].binary[c] = static_cast<std::uint8_t>(labels[c][i]);
    }
  }
  fx.labels = LabelTable(std::move(records));
  return fx;
}

std::vector<LabeledReview> make_toy_reviews(std::size_t n, std::uint64_t seed) {
  static const std::array<const char*, 8> items{"desk lamp", "kettle", "phone case", "backpack",
                                                "blender", "headphones", "office chair", "water bottle"};
  static const std::array<const char*, 8> trusted{
      "it arrived on time", "it is exactly as described", "the build is solid", "the seller answered quickly",
      "it still works after months", "the manual is clear", "I would buy it again", "the price was fair"};
  static const std::array<const char*, 8> dubious{
      "the listing looks fake", "it broke within a day", "the seller ignored refunds", "it looks nothing like the photos",
      "this is an obvious scam", "every review seems paid", "it never really arrived", "the box was already opened"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, 7);
  std::vector<LabeledReview> out;
  out.reserve(n);
  auto labels = balanced_labels(n, rng);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& phrases = labels[i] == 1 ? trusted : dubious;
    std::size_t p1 = pick(rng);
    std::size_t p2 = (p1 + 1 + pick(rng) % 7) % 8;
    std::string text = std::string("I bought a ") + items[pick(rng)] + ". " + phrases[p1] + " and " + phrases[p2] + ".";
    out.push_back({"r" + std::to_string(i), std::move(text), labels[i]});
  }
  return out;
}

LabelTable make_toy_label_table(const std::vector<LabeledReview>& reviews, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> any(1, 5);
  std::uniform_int_distribution<int> high(3, 5);
  std::uniform_int_distribution<int> low(1, 2);
  std::bernoulli_distribution agree(0.8);
  const auto trust = *construct_index(kTrustworthiness);
  const auto help = *construct_index("helpfulness");
  std::vector<LabelRecord> records;
  for (const auto& r : reviews) {
    LabelRecord rec;
    rec.id = r.id;
    rec.text = r.text;
    for (std::size_t c = 0; c < kNumConstructs; ++c) {
      int raw = any(rng);
      if (c == trust) raw = r.label ? high(rng) : low(rng);
      if (c == help) raw = (agree(rng) ? r.label : 1 - r.label) ? high(rng) : low(rng);
      rec.raw[c] = static_cast<std::uint8_t>(raw);
      rec.binary[c] = static_cast<std::uint8_t>(binarize(raw));
    }
    records.push_back(std::move(rec));
  }
  return LabelTable(std::move(records));
}

ModelConfig small_model_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.n_heads = 4;
  cfg.head_dim = 8;
  cfg.model_dim = 32;
  cfg.mlp_hidden_dim = 64;
  cfg.max_context = 320;
  cfg.seed = seed;
  return cfg;
}

}  // namespace headprobe
