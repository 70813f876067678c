#include "headprobe/diff_analysis.hpp"

#include <cmath>

namespace headprobe {

namespace {

void split_groups(const ActivationSet& acts, std::span<const int> labels, std::vector<std::size_t>& high,
                  std::vector<std::size_t>& low) {
  if (labels.size() != acts.n_samples) {
    throw InvalidArgument("label vector length " + std::to_string(labels.size()) + " does not match " +
                          std::to_string(acts.n_samples) + " samples");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      high.push_back(i);
    } else if (labels[i] == 0) {
      low.push_back(i);
    } else {
      throw InvalidArgument("labels must be 0 or 1");
    }
  }
  if (high.empty() || low.empty()) {
    throw InvalidArgument("both label classes must be present (high=" + std::to_string(high.size()) +
                          ", low=" + std::to_string(low.size()) + ")");
  }
}

}  // namespace

CellIndex DiffMap::strongest_cell() const {
  CellIndex best{};
  double best_abs = -1.0;
  for (int l = 0; l < delta.n_layers; ++l) {
    for (int h = 0; h < delta.n_heads; ++h) {
      const double a = std::abs(delta.at(l, h));
      if (a > best_abs) {
        best_abs = a;
        best = {l, h};
      }
    }
  }
  return best;
}

Grid mean_abs_activation(const ActivationSet& acts, std::span<const std::size_t> group) {
  if (group.empty()) throw InvalidArgument("mean_abs_activation needs a non-empty group");
  if (acts.dim == 0) throw InvalidArgument("activation dim must be positive");
  const int L = static_cast<int>(acts.n_layers);
  const int H = static_cast<int>(acts.n_heads);
  Grid mu(L, H);
  const double denom = static_cast<double>(group.size()) * static_cast<double>(acts.dim);
  for (int l = 0; l < L; ++l) {
    for (int h = 0; h < H; ++h) {
      double sum = 0.0;
      for (std::size_t i : group) {
        if (i >= acts.n_samples) throw InvalidArgument("group index out of range");
        for (float v : acts.vector_at(i, l, h)) sum += std::abs(static_cast<double>(v));
      }
      mu.at(l, h) = sum / denom;
    }
  }
  return mu;
}

Grid normalize_by_max_abs(const Grid& grid) {
  double max_abs = 0.0;
  for (double v : grid.values) max_abs = std::max(max_abs, std::abs(v));
  Grid out(grid.n_layers, grid.n_heads);
  if (max_abs == 0.0) return out;
  for (std::size_t i = 0; i < grid.values.size(); ++i) out.values[i] = grid.values[i] / max_abs;
  return out;
}

DiffMap diff_map(const ActivationSet& acts, std::span<const int> labels) {
  std::vector<std::size_t> high, low;
  split_groups(acts, labels, high, low);
  DiffMap map;
  map.n_high = high.size();
  map.n_low = low.size();
  map.mu_high = mean_abs_activation(acts, high);
  map.mu_low = mean_abs_activation(acts, low);
  map.delta = Grid(map.mu_high.n_layers, map.mu_high.n_heads);
  for (std::size_t i = 0; i < map.delta.values.size(); ++i) {
    map.delta.values[i] = map.mu_high.values[i] - map.mu_low.values[i];
  }
  map.normalized = normalize_by_max_abs(map.delta);
  return map;
}

ResidualNormCurve residual_norm_diff(const ActivationSet& acts, std::span<const int> labels) {
  if (!is_residual(acts.tap)) throw InvalidArgument("residual_norm_diff needs a residual tap");
  std::vector<std::size_t> high, low;
  split_groups(acts, labels, high, low);
  const Grid mu_high = mean_abs_activation(acts, high);
  const Grid mu_low = mean_abs_activation(acts, low);
  ResidualNormCurve curve;
  curve.tap = acts.tap;
  for (int l = 0; l < mu_high.n_layers; ++l) {
    curve.high.push_back(mu_high.at(l, 0));
    curve.low.push_back(mu_low.at(l, 0));
    curve.difference.push_back(mu_high.at(l, 0) - mu_low.at(l, 0));
  }
  return curve;
}

}  // namespace headprobe
