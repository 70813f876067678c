#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace headprobe {

struct CriterionResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestOptions {
  int trials = 100;
  int required_passes = 95;
  unsigned workers = 1;
  std::uint64_t seed = 42;
};

/// Planted-signal recovery: the strongest |delta| cell is the planted one.
CriterionResult check_planted_diff(const SelftestOptions& opts);

/// Probe localization: best head probe sits on the planted cell with
/// accuracy >= 0.90 while the other cells' median stays <= 0.65.
CriterionResult check_probe_localization(const SelftestOptions& opts);

/// XOR features defeat linear probes but not MLP probes; on linearly
/// planted features the two agree within 0.05.
CriterionResult check_linear_vs_mlp(const SelftestOptions& opts);

std::vector<CriterionResult> run_selftest(const SelftestOptions& opts);

}  // namespace headprobe
