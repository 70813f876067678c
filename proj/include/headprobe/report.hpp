#pragma once

#include <functional>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "headprobe/diff_analysis.hpp"
#include "headprobe/micro_transformer.hpp"
#include "headprobe/probe_engine.hpp"

namespace headprobe {

/// Ranks starting at 1; tied values share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation over positions where both inputs are finite.
/// Two constant sequences correlate at 1, one constant sequence at 0.
double spearman(std::span<const double> a, std::span<const double> b);

struct RunComparison {
  std::string construct;
  TapKind tap = TapKind::HeadPreProjection;
  int n_layers = 0;
  int n_heads = 1;
  std::vector<double> accuracy_delta;  // per cell, fine-tuned minus base; NaN if either cell failed
  std::vector<double> macro_f1_delta;
  std::vector<double> base_curve;  // per-layer best accuracy
  std::vector<double> tuned_curve;
  double rank_correlation = 0.0;
  CellIndex base_peak;
  CellIndex tuned_peak;

  double mean_base_accuracy() const;
  double mean_tuned_accuracy() const;
  /// rho >= 0.8 and peak layers at most two apart.
  bool structure_preserved() const;
};

/// Throws InvalidArgument when the grids, constructs or taps differ.
RunComparison compare_runs(const SweepResult& base, const SweepResult& tuned);

struct LabeledReview {
  std::string id;
  std::string text;
  int label = 0;
};

struct ModelVariant {
  std::string name;
  std::function<Classification(std::string_view review)> classify;
};

struct VariantEval {
  std::string name;
  std::vector<std::string> sample_ids;
  std::vector<int> truth;
  std::vector<int> predicted;
  std::vector<double> logit_high;
  std::vector<double> logit_low;
  ProbeMetrics metrics;
};

struct GenerationEval {
  std::vector<VariantEval> variants;
};

/// Classifies every review with every variant. A classify failure is
/// rethrown as std::runtime_error naming the variant and sample id.
GenerationEval generation_eval(std::span<const ModelVariant> variants, std::span<const LabeledReview> reviews);

// Tabular exports. Reals use round-trip precision.
std::string diffmap_table(const DiffMap& map);
DiffMap parse_diffmap_table(std::istream& in);

std::string sweep_table(const SweepResult& sweep);
SweepResult parse_sweep_table(std::istream& in);

std::string residual_curve_table(const ResidualNormCurve& curve);
std::string layer_curves_table(const RunComparison& cmp);
std::string comparison_jsonl(const RunComparison& cmp);
std::string best_table(const std::vector<BestEntry>& table);
std::string generation_eval_table(const GenerationEval& eval);
std::string generation_predictions_table(const GenerationEval& eval);

/// Grid of `metric` over a sweep; failed cells become NaN and are flagged
/// in `missing`.
Grid sweep_grid(const SweepResult& sweep, SelectionMetric metric, std::vector<bool>* missing = nullptr);

}  // namespace headprobe
