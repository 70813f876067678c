#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace headprobe {

inline constexpr double kTestFraction = 0.2;

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::string target;
  std::vector<std::size_t> train_indices;  // ascending
  std::vector<std::size_t> test_indices;   // ascending

  bool operator==(const SplitAssignment&) const = default;
};

/// Stratified 80/20 split. Each class contributes round(0.2 * class size)
/// test samples, clamped so both partitions keep at least one member.
/// Throws InvalidArgument when n < 5, sizes disagree, labels are not 0/1,
/// or a class has fewer than two members.
SplitAssignment make_split(std::size_t n, std::uint64_t seed, std::span<const int> labels,
                           std::string target = {});

/// Seed for a per-construct split: base seed mixed with the construct name.
std::uint64_t construct_split_seed(std::uint64_t base_seed, std::string_view construct);

}  // namespace headprobe
