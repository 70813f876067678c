#pragma once

#include <cstdint>
#include <vector>

#include "headprobe/activation_store.hpp"
#include "headprobe/diff_analysis.hpp"
#include "headprobe/labels.hpp"
#include "headprobe/micro_transformer.hpp"
#include "headprobe/probe_engine.hpp"
#include "headprobe/report.hpp"

namespace headprobe {

// Synthetic data with known ground truth, used by the self-test and the
// test suites.

struct PlantedHeadSpec {
  std::size_t n_samples = 400;
  int n_layers = 6;
  int n_heads = 8;
  int dim = 16;
  CellIndex planted{4, 3};
  int shifted_dims = 8;
  double shift = 1.0;  // added to the first shifted_dims entries for label-1 samples
  double noise = 1.0;
  std::uint64_t seed = 1;
};

struct PlantedFixture {
  ActivationSet acts;
  std::vector<int> labels;  // exactly balanced, shuffled
};

/// Unit Gaussian head activations with a label-1 mean shift at one cell.
PlantedFixture make_planted_heads(const PlantedHeadSpec& spec);

struct PlantedResidualSpec {
  std::size_t n_samples = 400;
  int n_layers = 6;
  int dim = 32;
  int first_signal_layer = 4;  // layers >= this carry the shift
  int shifted_dims = 8;
  double shift = 1.0;
  double noise = 1.0;
  TapKind tap = TapKind::PostMlpResidual;
  std::uint64_t seed = 1;
};

PlantedFixture make_planted_residual(const PlantedResidualSpec& spec);

struct FeatureFixture {
  FeatureMatrix x;
  std::vector<int> y;
};

/// Clusters at (+-1, +-1) on the first two features with XOR labels;
/// remaining features are pure noise.
FeatureFixture make_xor_fixture(std::size_t n, int dim, double cluster_noise, std::uint64_t seed);

/// Label-1 mean shift on the first shifted_dims of unit Gaussian features.
FeatureFixture make_linear_fixture(std::size_t n, int dim, int shifted_dims, double shift, std::uint64_t seed);

/// One head tap of n_layers * n_heads == constructs().size() cells and a
/// label table in which construct c is planted at cell c with strength
/// strengths[c] (a mean shift on a single dimension).
struct GradedConstructFixture {
  ActivationSet acts;
  LabelTable labels;
  std::vector<double> strengths;
};
GradedConstructFixture make_graded_constructs(std::size_t n_samples, int dim, std::uint64_t seed);

/// Short synthetic product reviews whose trust label is decided by word
/// choice.
std::vector<LabeledReview> make_toy_reviews(std::size_t n, std::uint64_t seed);

/// Label table for toy reviews: trustworthiness (and, more weakly,
/// helpfulness) follow the review label; other constructs are random.
LabelTable make_toy_label_table(const std::vector<LabeledReview>& reviews, std::uint64_t seed);

/// Small model config used for fast training-based checks.
ModelConfig small_model_config(std::uint64_t seed);

}  // namespace headprobe
