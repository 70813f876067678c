#include "headprobe/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "headprobe/common.hpp"
#include "headprobe/diff_analysis.hpp"
#include "headprobe/fixtures.hpp"
#include "headprobe/probe_engine.hpp"
#include "headprobe/split.hpp"

namespace headprobe {

namespace {

constexpr CellIndex kPlanted{4, 3};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// P[X >= k] for X ~ Binomial(n, p).
double binomial_upper_tail(int n, double p, int k) {
  double total = 0.0;
  for (int i = k; i <= n; ++i) {
    const double log_term = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                            i * std::log(p) + (n - i) * std::log1p(-p);
    total += std::exp(log_term);
  }
  return total;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CriterionResult check_planted_diff(const SelftestOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  int hits = 0;
  for (int t = 0; t < opts.trials; ++t) {
    PlantedHeadSpec spec;
    spec.seed = derive_seed(opts.seed, "planted-diff", static_cast<std::uint64_t>(t));
    auto fx = make_planted_heads(spec);
    if (diff_map(fx.acts, fx.labels).strongest_cell() == kPlanted) ++hits;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CriterionResult r;
  r.name = "planted-signal recovery (diff map)";
  r.passed = hits >= opts.required_passes && secs < 10.0;
  r.detail = format("max-|delta| cell = (4,3) in %d/%d seeds (need %d); %.2f s for all trials (limit 10 s)", hits,
                    opts.trials, opts.required_passes, secs);
  return r;
}

CriterionResult check_probe_localization(const SelftestOptions& opts) {
  int hits = 0;
  double worst_best = 1.0;
  double worst_median = 0.0;
  int located = 0;
  for (int t = 0; t < opts.trials; ++t) {
    PlantedHeadSpec spec;
    spec.seed = derive_seed(opts.seed, "probe-localization", static_cast<std::uint64_t>(t));
    auto fx = make_planted_heads(spec);
    auto split = make_split(fx.labels.size(), construct_split_seed(spec.seed, kTrustworthiness), fx.labels,
                            std::string(kTrustworthiness));
    auto sweep = sweep_heads(fx.acts, fx.labels, split, ProbeConfig::linear(), opts.workers);
    auto best = sweep.best_cell(SelectionMetric::Accuracy);
    std::vector<double> others;
    for (int l = 0; l < sweep.n_layers; ++l) {
      for (int h = 0; h < sweep.n_heads; ++h) {
        if (CellIndex{l, h} == kPlanted) continue;
        const auto& c = sweep.at(l, h);
        others.push_back(c.ok() ? c.metrics->accuracy : 0.0);
      }
    }
    const auto& planted = sweep.at(kPlanted.layer, kPlanted.head);
    const double planted_acc = planted.ok() ? planted.metrics->accuracy : 0.0;
    const double med = median(others);
    worst_best = std::min(worst_best, planted_acc);
    worst_median = std::max(worst_median, med);
    const bool at_planted = best && *best == kPlanted;
    located += at_planted ? 1 : 0;
    if (at_planted && planted_acc >= 0.90 && med <= 0.65) ++hits;
  }
  // Even the Bayes-optimal rule for this fixture misses the 0.90 bar on
  // some test splits; report how often, as a ceiling on the pass count.
  const PlantedHeadSpec spec;
  const double separation = spec.shift * std::sqrt(static_cast<double>(spec.shifted_dims)) / spec.noise;
  const double bayes_acc = 0.5 * std::erfc(-separation / 2.0 / std::sqrt(2.0));
  const auto n_test = static_cast<int>(std::lround(kTestFraction * static_cast<double>(spec.n_samples)));
  const double ceiling = binomial_upper_tail(n_test, bayes_acc, static_cast<int>(std::ceil(0.90 * n_test - 1e-9)));

  CriterionResult r;
  r.name = "probe localization (head sweep)";
  r.passed = hits >= opts.required_passes;
  r.detail = format(
      "passed %d/%d seeds (need %d); best cell at (4,3) in %d; lowest planted accuracy %.4f; highest off-cell "
      "median %.4f; Bayes-optimal accuracy %.4f reaches 0.90 on %d test rows with probability %.3f",
      hits, opts.trials, opts.required_passes, located, worst_best, worst_median, bayes_acc, n_test, ceiling);
  return r;
}

CriterionResult check_linear_vs_mlp(const SelftestOptions& opts) {
  const auto linear_cfg = ProbeConfig::linear();
  auto mlp_cfg = ProbeConfig::mlp();
  mlp_cfg.seed = derive_seed(opts.seed, "mlp-probe");

  auto xor_fx = make_xor_fixture(400, 16, 0.3, derive_seed(opts.seed, "xor-fixture"));
  const double xor_linear = evaluate(train_linear_probe(xor_fx.x, xor_fx.y, linear_cfg), xor_fx.x, xor_fx.y).accuracy;
  const double xor_mlp = evaluate(train_mlp_probe(xor_fx.x, xor_fx.y, mlp_cfg), xor_fx.x, xor_fx.y).accuracy;

  auto lin_fx = make_linear_fixture(2000, 16, 8, 1.0, derive_seed(opts.seed, "linear-fixture"));
  auto split = make_split(lin_fx.y.size(), derive_seed(opts.seed, "linear-split"), lin_fx.y);
  auto rows = [&](const std::vector<std::size_t>& idx) {
    FeatureMatrix x(static_cast<Eigen::Index>(idx.size()), lin_fx.x.cols());
    std::vector<int> y;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = lin_fx.x.row(static_cast<Eigen::Index>(idx[i]));
      y.push_back(lin_fx.y[idx[i]]);
    }
    return std::make_pair(x, y);
  };
  auto [x_train, y_train] = rows(split.train_indices);
  auto [x_test, y_test] = rows(split.test_indices);
  const double lin_linear = evaluate(train_linear_probe(x_train, y_train, linear_cfg), x_test, y_test).accuracy;
  const double lin_mlp = evaluate(train_mlp_probe(x_train, y_train, mlp_cfg), x_test, y_test).accuracy;

  CriterionResult r;
  r.name = "linear vs MLP separation";
  r.passed = xor_linear <= 0.75 && xor_mlp >= 0.95 && std::abs(lin_mlp - lin_linear) <= 0.05;
  r.detail = format(
      "XOR train accuracy: linear %.4f (<= 0.75), MLP %.4f (>= 0.95); linear fixture test accuracy: linear %.4f, "
      "MLP %.4f, gap %.4f (<= 0.05)",
      xor_linear, xor_mlp, lin_linear, lin_mlp, std::abs(lin_mlp - lin_linear));
  return r;
}

std::vector<CriterionResult> run_selftest(const SelftestOptions& opts) {
  return {check_planted_diff(opts), check_probe_localization(opts), check_linear_vs_mlp(opts)};
}

}  // namespace headprobe
