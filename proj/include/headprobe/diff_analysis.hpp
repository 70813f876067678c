#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "headprobe/activation_store.hpp"

namespace headprobe {

struct CellIndex {
  int layer = 0;
  int head = 0;
  auto operator<=>(const CellIndex&) const = default;
};

/// Per (layer, head) grid of 64-bit values, row-major by layer.
struct Grid {
  int n_layers = 0;
  int n_heads = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(int layers, int heads, double fill = 0.0)
      : n_layers(layers), n_heads(heads), values(static_cast<std::size_t>(layers) * heads, fill) {}

  double& at(int layer, int head) { return values[static_cast<std::size_t>(layer) * n_heads + head]; }
  double at(int layer, int head) const { return values[static_cast<std::size_t>(layer) * n_heads + head]; }
  bool operator==(const Grid&) const = default;
};

/// Groupwise activation-difference map over the (layer, head) grid.
struct DiffMap {
  Grid mu_high;
  Grid mu_low;
  Grid delta;       // mu_high - mu_low
  Grid normalized;  // delta / max |delta|, all zero when every delta is zero
  std::size_t n_high = 0;
  std::size_t n_low = 0;

  /// Cell with the largest |delta|; ties resolve to the smallest (layer, head).
  CellIndex strongest_cell() const;
};

/// Mean over the group of each head vector's per-dimension average
/// absolute value: (1 / (|group| * d)) * sum_i sum_k |A[i, layer, head, k]|.
/// Accepts any tap kind; residual taps yield an n_layers x 1 grid.
Grid mean_abs_activation(const ActivationSet& acts, std::span<const std::size_t> group);

/// Throws InvalidArgument for a label/sample count mismatch or when either
/// class is missing.
DiffMap diff_map(const ActivationSet& acts, std::span<const int> labels);

/// Divides by the largest |value|; 0/0 maps to 0.
Grid normalize_by_max_abs(const Grid& grid);

struct ResidualNormCurve {
  TapKind tap = TapKind::PostMlpResidual;
  std::vector<double> high;
  std::vector<double> low;
  std::vector<double> difference;  // high - low
};

ResidualNormCurve residual_norm_diff(const ActivationSet& acts, std::span<const int> labels);

}  // namespace headprobe
