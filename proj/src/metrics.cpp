#include "headprobe/metrics.hpp"

#include <string>

#include "headprobe/common.hpp"

namespace headprobe {

ConfusionCounts count_confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw InvalidArgument("truth and prediction lengths differ: " + std::to_string(truth.size()) + " vs " +
                          std::to_string(predicted.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if ((truth[i] != 0 && truth[i] != 1) || (predicted[i] != 0 && predicted[i] != 1)) {
      throw InvalidArgument("labels must be 0 or 1 (index " + std::to_string(i) + ")");
    }
    const bool y = truth[i] == 1;
    const bool p = predicted[i] == 1;
    if (y && p) {
      ++c.tp;
    } else if (!y && p) {
      ++c.fp;
    } else if (y && !p) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

ProbeMetrics metrics_from_counts(const ConfusionCounts& c) {
  ProbeMetrics m;
  m.counts = c;
  const std::size_t n = c.total();
  if (n == 0) return m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
  m.f1_high = f1_score(c.tp, c.fp, c.fn);
  m.f1_low = f1_score(c.tn, c.fn, c.fp);
  m.macro_f1 = (m.f1_low + m.f1_high) / 2.0;
  const double n_high = static_cast<double>(c.tp + c.fn);
  const double n_low = static_cast<double>(c.tn + c.fp);
  m.weighted_f1 = (n_low * m.f1_low + n_high * m.f1_high) / static_cast<double>(n);
  return m;
}

ProbeMetrics compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
  return metrics_from_counts(count_confusion(truth, predicted));
}

}  // namespace headprobe
