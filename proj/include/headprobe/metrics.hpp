#pragma once

#include <cstddef>
#include <span>

namespace headprobe {

/// Binary classification counts from the "high" (label 1) point of view;
/// the "low" class swaps the roles of tp/tn and fp/fn.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct ProbeMetrics {
  double accuracy = 0.0;
  double f1_low = 0.0;
  double f1_high = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  ConfusionCounts counts;

  bool operator==(const ProbeMetrics&) const = default;
};

ConfusionCounts count_confusion(std::span<const int> truth, std::span<const int> predicted);

/// F1 = 2tp / (2tp + fp + fn); a class absent from truth and predictions
/// scores 0.
double f1_score(std::size_t tp, std::size_t fp, std::size_t fn);

ProbeMetrics metrics_from_counts(const ConfusionCounts& c);
ProbeMetrics compute_metrics(std::span<const int> truth, std::span<const int> predicted);

}  // namespace headprobe
