#include "headprobe/split.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "headprobe/common.hpp"

namespace headprobe {

SplitAssignment make_split(std::size_t n, std::uint64_t seed, std::span<const int> labels,
                           std::string target) {
  if (n < 5) throw InvalidArgument("make_split needs n >= 5, got " + std::to_string(n));
  if (labels.size() != n) {
    throw InvalidArgument("label vector length " + std::to_string(labels.size()) +
                          " does not match n = " + std::to_string(n));
  }
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  SplitAssignment split;
  split.seed = seed;
  split.target = std::move(target);

  std::mt19937_64 rng(seed);
  for (auto& members : by_class) {
    if (members.size() < 2) {
      throw InvalidArgument("cannot stratify: a class has " + std::to_string(members.size()) +
                            " member(s), need at least 2");
    }
    std::shuffle(members.begin(), members.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(members.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    split.test_indices.insert(split.test_indices.end(), members.begin(), members.begin() + n_test);
    split.train_indices.insert(split.train_indices.end(), members.begin() + n_test, members.end());
  }
  std::sort(split.train_indices.begin(), split.train_indices.end());
  std::sort(split.test_indices.begin(), split.test_indices.end());
  return split;
}

std::uint64_t construct_split_seed(std::uint64_t base_seed, std::string_view construct) {
  return derive_seed(base_seed, construct);
}

}  // namespace headprobe
