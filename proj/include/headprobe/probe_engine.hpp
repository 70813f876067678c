#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headprobe/activation_store.hpp"
#include "headprobe/diff_analysis.hpp"
#include "headprobe/metrics.hpp"
#include "headprobe/split.hpp"

namespace headprobe {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ProbeKind { Linear, Mlp };

struct ProbeConfig {
  ProbeKind kind = ProbeKind::Linear;
  double l2 = 1.0;
  bool standardize = true;
  std::vector<int> hidden{64, 64};  // MLP only
  int max_iterations = 500;         // Newton iterations (linear) or epochs (MLP)
  double tolerance = 1e-6;          // gradient-norm stopping rule (linear)
  std::uint64_t seed = 42;
  double learning_rate = 1e-2;  // MLP only (Adam)
  int batch_size = 32;          // MLP only

  static ProbeConfig linear() { return {}; }
  static ProbeConfig mlp();

  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

/// z-scores features with training-set statistics. Zero-variance columns
/// keep a scale of 1.
struct FeatureScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static FeatureScaler fit(const FeatureMatrix& x);
  FeatureMatrix transform(const FeatureMatrix& x) const;
};

struct Probe {
  ProbeKind kind = ProbeKind::Linear;
  std::optional<FeatureScaler> scaler;
  // Linear: logit = w . x + b
  Eigen::VectorXd weights;
  double bias = 0.0;
  // MLP: ReLU hidden layers followed by a single sigmoid unit.
  std::vector<FeatureMatrix> layer_weights;  // out x in
  std::vector<Eigen::VectorXd> layer_biases;
  int iterations = 0;

  Eigen::VectorXd logits(const FeatureMatrix& x) const;
  Eigen::VectorXd predict_proba(const FeatureMatrix& x) const;
  /// Probability above 0.5 predicts 1; exactly 0.5 predicts 0.
  std::vector<int> predict(const FeatureMatrix& x) const;
};

/// L2-regularized logistic regression by damped Newton iterations until
/// the gradient norm is at most cfg.tolerance. Objective:
///   (1/n) * [sum_i logloss_i + (l2 / 2) * |w|^2], bias unpenalized.
Probe train_linear_probe(const FeatureMatrix& x, std::span<const int> y, const ProbeConfig& cfg);

/// Mini-batch Adam on a ReLU MLP with the same per-sample objective.
Probe train_mlp_probe(const FeatureMatrix& x, std::span<const int> y, const ProbeConfig& cfg);

Probe train_probe(const FeatureMatrix& x, std::span<const int> y, const ProbeConfig& cfg);

ProbeMetrics evaluate(const Probe& probe, const FeatureMatrix& x, std::span<const int> y);

/// Regularized objective and its gradient (weights then bias) for a
/// linear probe on raw features; the probe's scaler is applied first.
double linear_probe_loss(const Probe& probe, const FeatureMatrix& x, std::span<const int> y, double l2);
Eigen::VectorXd linear_probe_gradient(const Probe& probe, const FeatureMatrix& x, std::span<const int> y,
                                      double l2);

struct CellResult {
  std::optional<ProbeMetrics> metrics;
  std::string error;  // set when the cell failed

  bool ok() const { return metrics.has_value(); }
};

enum class SelectionMetric { Accuracy, F1High, F1Low, MacroF1, WeightedF1 };
double metric_value(const ProbeMetrics& m, SelectionMetric metric);
std::string_view metric_name(SelectionMetric metric);
SelectionMetric parse_metric(std::string_view name);

struct SweepResult {
  std::string construct;
  TapKind tap = TapKind::HeadPreProjection;
  bool concat_heads = false;  // layer sweep over concatenated head outputs
  int n_layers = 0;
  int n_heads = 1;  // 1 for layer sweeps
  std::vector<CellResult> cells;
  std::uint64_t split_seed = 0;
  ProbeConfig config;

  const CellResult& at(int layer, int head = 0) const {
    return cells[static_cast<std::size_t>(layer) * n_heads + head];
  }
  /// Best successful cell; ties resolve to the smallest (layer, head).
  std::optional<CellIndex> best_cell(SelectionMetric metric) const;
  /// Per-layer maximum of `metric` over heads (failed cells ignored;
  /// a layer with no successful cell reports NaN).
  std::vector<double> layer_curve(SelectionMetric metric) const;
};

/// Cell features: rows are samples in `rows` order, columns the d entries
/// of (layer, head).
FeatureMatrix cell_features(const ActivationSet& acts, int layer, int head, std::span<const std::size_t> rows);

/// One probe per (layer, head) on the head tap, trained on the split's
/// train rows and scored on its test rows. Per-cell seeds come from
/// (cfg.seed, layer, head), so results do not depend on `workers`.
SweepResult sweep_heads(const ActivationSet& acts, std::span<const int> labels, const SplitAssignment& split,
                        const ProbeConfig& cfg, unsigned workers = 1);

/// One probe per layer. Residual taps use the model-width state; with a
/// head tap, `concat_heads` must be set and each layer's head vectors are
/// concatenated.
SweepResult sweep_layers(const ActivationSet& acts, std::span<const int> labels, const SplitAssignment& split,
                         const ProbeConfig& cfg, unsigned workers = 1, bool concat_heads = false);

struct BestEntry {
  std::string construct;
  double best = 0.0;
  CellIndex cell;
  ProbeMetrics metrics;
};

/// Best cell per construct by `metric` (macro F1 unless overridden),
/// sorted by descending best value; equal values keep input order.
std::vector<BestEntry> best_per_construct(std::span<const SweepResult> sweeps,
                                          SelectionMetric metric = SelectionMetric::MacroF1);

}  // namespace headprobe
