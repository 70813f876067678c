#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "headprobe/common.hpp"

namespace headprobe {

enum class TapKind : std::uint8_t {
  HeadPreProjection = 0,
  PostAttentionResidual = 1,
  PostMlpResidual = 2,
};

std::string_view tap_name(TapKind tap);  // "head", "post_attn", "post_mlp"
TapKind parse_tap(std::string_view name);
inline bool is_residual(TapKind tap) { return tap != TapKind::HeadPreProjection; }

/// Payload holds NaN or Inf.
class NonFiniteError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Tapped activations for one model and tap kind. Layout is row-major
/// (sample, layer, head, dim); residual taps have n_heads == 1 and dim
/// equal to the model width.
struct ActivationSet {
  std::string model_name;
  TapKind tap = TapKind::HeadPreProjection;
  std::uint64_t n_samples = 0;
  std::uint32_t n_layers = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t dim = 0;
  std::vector<std::string> sample_ids;
  std::vector<float> data;

  std::size_t cell_offset(std::size_t sample, std::size_t layer, std::size_t head) const {
    return ((sample * n_layers + layer) * n_heads + head) * dim;
  }
  std::span<const float> vector_at(std::size_t sample, std::size_t layer, std::size_t head = 0) const {
    return {data.data() + cell_offset(sample, layer, head), dim};
  }
  std::span<float> vector_at(std::size_t sample, std::size_t layer, std::size_t head = 0) {
    return {data.data() + cell_offset(sample, layer, head), dim};
  }

  /// Throws FormatError / NonFiniteError describing the first violated
  /// invariant.
  void validate() const;

  bool operator==(const ActivationSet&) const = default;
};

inline constexpr std::uint32_t kActivationFormatVersion = 1;

void write_activations(const ActivationSet& set, std::ostream& out);
ActivationSet read_activations(std::istream& in);

void write_activations_file(const ActivationSet& set, const std::string& path);
ActivationSet read_activations_file(const std::string& path);

}  // namespace headprobe
