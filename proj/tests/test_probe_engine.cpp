#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "headprobe/fixtures.hpp"
#include "headprobe/labels.hpp"
#include "headprobe/probe_engine.hpp"
#include "headprobe/report.hpp"
#include "headprobe/split.hpp"

using namespace headprobe;

namespace {

std::vector<int> predictions(const Probe& p, const FeatureMatrix& x) { return p.predict(x); }

double accuracy(const Probe& p, const FeatureMatrix& x, const std::vector<int>& y) {
  return evaluate(p, x, y).accuracy;
}

FeatureFixture rows(const FeatureFixture& f, std::size_t begin, std::size_t end) {
  FeatureFixture out;
  out.x = f.x.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
  out.y.assign(f.y.begin() + static_cast<std::ptrdiff_t>(begin), f.y.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

}  // namespace

TEST_CASE("linearly separable data in one dimension") {
  FeatureMatrix x(8, 1);
  x << -4, -3, -2, -1, 1, 2, 3, 4;
  std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
  auto cfg = ProbeConfig::linear();
  auto p = train_linear_probe(x, y, cfg);
  CHECK(predictions(p, x) == y);
  CHECK(p.weights(0) > 0.0);
  CHECK(linear_probe_gradient(p, x, y, cfg.l2).norm() <= cfg.tolerance);
}

TEST_CASE("exactly one half predicts low") {
  Probe p;
  p.weights = Eigen::VectorXd::Zero(2);
  p.bias = 0.0;
  FeatureMatrix x = FeatureMatrix::Ones(3, 2);
  CHECK(p.predict(x) == std::vector<int>{0, 0, 0});
  CHECK(p.predict_proba(x)(0) == 0.5);
}

TEST_CASE("Newton solution reaches the stationary point of a convex objective") {
  auto f = make_linear_fixture(300, 10, 3, 0.8, 4);
  auto cfg = ProbeConfig::linear();
  auto p = train_linear_probe(f.x, f.y, cfg);
  const FeatureMatrix& xs = f.x;
  CHECK(linear_probe_gradient(p, xs, f.y, cfg.l2).norm() <= cfg.tolerance);
  Probe zero = p;
  zero.weights.setZero();
  zero.bias = 0.0;
  const double at_solution = linear_probe_loss(p, xs, f.y, cfg.l2);
  CHECK(at_solution <= linear_probe_loss(zero, xs, f.y, cfg.l2));
  CHECK(at_solution == doctest::Approx(linear_probe_loss(p, xs, f.y, cfg.l2)));
  // Small perturbations can only increase a convex objective at its minimum.
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1e-3);
  for (int k = 0; k < 10; ++k) {
    Probe q = p;
    for (Eigen::Index i = 0; i < q.weights.size(); ++i) q.weights(i) += g(rng);
    q.bias += g(rng);
    CHECK(linear_probe_loss(q, xs, f.y, cfg.l2) >= at_solution);
  }
}

TEST_CASE("analytic probe gradient matches finite differences") {
  auto f = make_linear_fixture(60, 4, 2, 1.0, 5);
  auto cfg = ProbeConfig::linear();
  cfg.max_iterations = 1;
  auto p = train_linear_probe(f.x, f.y, cfg);
  p.weights << 0.3, -0.2, 0.5, 0.1;
  p.bias = -0.4;
  const FeatureMatrix& xs = f.x;
  auto grad = linear_probe_gradient(p, xs, f.y, 2.0);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i <= p.weights.size(); ++i) {
    Probe a = p, b = p;
    if (i < p.weights.size()) {
      a.weights(i) += h;
      b.weights(i) -= h;
    } else {
      a.bias += h;
      b.bias -= h;
    }
    const double fd = (linear_probe_loss(a, xs, f.y, 2.0) - linear_probe_loss(b, xs, f.y, 2.0)) / (2 * h);
    CHECK(grad(i) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("XOR separates the linear and MLP probes") {
  auto all = make_xor_fixture(500, 2, 0.2, 6);
  auto train = rows(all, 0, 400);
  auto test = rows(all, 400, 500);
  auto lin = train_linear_probe(train.x, train.y, ProbeConfig::linear());
  auto mlp = train_mlp_probe(train.x, train.y, ProbeConfig::mlp());
  CHECK(accuracy(lin, test.x, test.y) <= 0.75);
  CHECK(accuracy(mlp, test.x, test.y) == 1.0);
}

TEST_CASE("standardization makes the linear probe scale invariant") {
  auto f = make_linear_fixture(200, 5, 2, 1.0, 7);
  auto scaled = f;
  for (Eigen::Index j = 0; j < scaled.x.cols(); ++j) scaled.x.col(j) *= std::pow(10.0, static_cast<double>(j) - 2.0);
  auto a = train_linear_probe(f.x, f.y, ProbeConfig::linear());
  auto b = train_linear_probe(scaled.x, scaled.y, ProbeConfig::linear());
  CHECK(a.predict(f.x) == b.predict(scaled.x));
  CHECK((a.predict_proba(f.x) - b.predict_proba(scaled.x)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("constant features are handled") {
  FeatureMatrix x(10, 2);
  std::vector<int> y(10);
  for (int i = 0; i < 10; ++i) {
    x(i, 0) = 5.0;
    x(i, 1) = i < 5 ? -1.0 : 1.0;
    y[static_cast<std::size_t>(i)] = i < 5 ? 0 : 1;
  }
  auto s = FeatureScaler::fit(x);
  CHECK(s.scale(0) == 1.0);
  auto p = train_linear_probe(x, y, ProbeConfig::linear());
  CHECK(p.predict(x) == y);
  FeatureMatrix all_const = FeatureMatrix::Constant(10, 3, 2.0);
  auto q = train_linear_probe(all_const, y, ProbeConfig::linear());
  CHECK(q.weights.isZero(1e-12));
}

TEST_CASE("probe input errors") {
  FeatureMatrix x = FeatureMatrix::Random(6, 2);
  std::vector<int> one_class(6, 1);
  CHECK_THROWS_WITH_AS(train_linear_probe(x, one_class, ProbeConfig::linear()), doctest::Contains("single class"),
                       InvalidArgument);
  std::vector<int> short_y{0, 1};
  CHECK_THROWS_AS(train_linear_probe(x, short_y, ProbeConfig::linear()), InvalidArgument);
  std::vector<int> y{0, 1, 0, 1, 0, 1};
  x(0, 0) = std::nan("");
  CHECK_THROWS_AS(train_linear_probe(x, y, ProbeConfig::linear()), NumericalError);
  ProbeConfig bad;
  bad.l2 = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(parse_metric("precision"), InvalidArgument);
  CHECK(parse_metric("macro_f1") == SelectionMetric::MacroF1);
}

TEST_CASE("head sweep localizes the planted cell and is worker independent") {
  PlantedHeadSpec spec;
  spec.n_layers = 3;
  spec.n_heads = 4;
  spec.planted = {2, 1};
  spec.shift = 1.5;
  spec.seed = 21;
  auto f = make_planted_heads(spec);
  auto split = make_split(spec.n_samples, 42, f.labels);
  auto one = sweep_heads(f.acts, f.labels, split, ProbeConfig::linear(), 1);
  auto four = sweep_heads(f.acts, f.labels, split, ProbeConfig::linear(), 4);
  REQUIRE(one.cells.size() == 12u);
  CHECK(one.best_cell(SelectionMetric::Accuracy) == spec.planted);
  CHECK(one.at(2, 1).metrics->accuracy >= 0.9);
  for (std::size_t c = 0; c < one.cells.size(); ++c) CHECK(one.cells[c].metrics == four.cells[c].metrics);
  CHECK(sweep_table(one) == sweep_table(four));
}

TEST_CASE("pure noise stays near chance") {
  PlantedHeadSpec spec;
  spec.n_layers = 10;
  spec.n_heads = 10;
  spec.shift = 0.0;
  spec.seed = 22;
  auto f = make_planted_heads(spec);
  auto split = make_split(spec.n_samples, 42, f.labels);
  auto sweep = sweep_heads(f.acts, f.labels, split, ProbeConfig::linear(), 2);
  double best = 0.0;
  for (const auto& c : sweep.cells) best = std::max(best, c.metrics->accuracy);
  CHECK(best < 0.70);
}

TEST_CASE("failed cells are recorded, not fatal") {
  PlantedHeadSpec spec;
  spec.n_layers = 2;
  spec.n_heads = 2;
  spec.seed = 23;
  auto f = make_planted_heads(spec);
  for (std::size_t i = 0; i < spec.n_samples; ++i) f.acts.vector_at(i, 1, 1)[0] = std::numeric_limits<float>::infinity();
  auto split = make_split(spec.n_samples, 42, f.labels);
  auto sweep = sweep_heads(f.acts, f.labels, split, ProbeConfig::linear());
  CHECK_FALSE(sweep.at(1, 1).ok());
  CHECK(sweep.at(1, 1).error.find("non-finite") != std::string::npos);
  CHECK(sweep.at(0, 0).ok());
  auto curve = sweep.layer_curve(SelectionMetric::Accuracy);
  CHECK(std::isfinite(curve[1]));
}

TEST_CASE("layer sweeps over residual and concatenated head taps") {
  PlantedResidualSpec spec;
  spec.seed = 24;
  auto f = make_planted_residual(spec);
  auto split = make_split(spec.n_samples, 42, f.labels);
  auto sweep = sweep_layers(f.acts, f.labels, split, ProbeConfig::linear());
  CHECK(sweep.n_heads == 1);
  auto curve = sweep.layer_curve(SelectionMetric::Accuracy);
  const double early = *std::max_element(curve.begin(), curve.begin() + spec.first_signal_layer);
  const double late = *std::min_element(curve.begin() + spec.first_signal_layer, curve.end());
  CHECK(late > early);
  CHECK(late >= 0.85);

  PlantedHeadSpec hs;
  hs.n_layers = 3;
  hs.n_heads = 2;
  hs.dim = 4;
  hs.planted = {1, 1};
  hs.shifted_dims = 4;
  hs.shift = 1.5;
  auto h = make_planted_heads(hs);
  auto hsplit = make_split(hs.n_samples, 42, h.labels);
  CHECK_THROWS_AS(sweep_layers(h.acts, h.labels, hsplit, ProbeConfig::linear()), InvalidArgument);
  auto concat = sweep_layers(h.acts, h.labels, hsplit, ProbeConfig::linear(), 1, true);
  CHECK(concat.concat_heads);
  CHECK(concat.best_cell(SelectionMetric::Accuracy) == CellIndex{1, 0});
  auto x = cell_features(h.acts, 1, 1, hsplit.train_indices);
  CHECK(x.cols() == 4);
  CHECK(x.rows() == static_cast<Eigen::Index>(hsplit.train_indices.size()));
}

TEST_CASE("sample order does not change the sweep") {
  PlantedHeadSpec spec;
  spec.n_layers = 2;
  spec.n_heads = 2;
  spec.planted = {1, 0};
  spec.seed = 25;
  auto f = make_planted_heads(spec);
  auto split = make_split(spec.n_samples, 42, f.labels);
  auto base = sweep_heads(f.acts, f.labels, split, ProbeConfig::linear());

  std::vector<std::size_t> perm(spec.n_samples);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  auto acts = f.acts;
  std::vector<int> labels(spec.n_samples);
  std::vector<std::size_t> where(spec.n_samples);
  const std::size_t stride = f.acts.n_layers * f.acts.n_heads * f.acts.dim;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(f.acts.data.begin() + static_cast<std::ptrdiff_t>(perm[i] * stride), stride,
                acts.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    labels[i] = f.labels[perm[i]];
    where[perm[i]] = i;
  }
  SplitAssignment moved = split;
  for (auto* part : {&moved.train_indices, &moved.test_indices}) {
    for (auto& idx : *part) idx = where[idx];
    std::sort(part->begin(), part->end());
  }
  auto shuffled = sweep_heads(acts, labels, moved, ProbeConfig::linear());
  for (std::size_t c = 0; c < base.cells.size(); ++c) {
    CHECK(shuffled.cells[c].metrics->accuracy == doctest::Approx(base.cells[c].metrics->accuracy));
    CHECK(shuffled.cells[c].metrics->counts == base.cells[c].metrics->counts);
  }
}

TEST_CASE("best_per_construct ordering and tie-breaks") {
  auto make = [](std::string name, std::vector<double> acc) {
    SweepResult s;
    s.construct = std::move(name);
    s.n_layers = 2;
    s.n_heads = 2;
    for (double a : acc) {
      ProbeMetrics m;
      m.accuracy = a;
      m.macro_f1 = a;
      s.cells.push_back({m, ""});
    }
    return s;
  };
  std::vector<SweepResult> sweeps{make("a", {0.6, 0.7, 0.7, 0.5}), make("b", {0.9, 0.1, 0.1, 0.1}),
                                  make("c", {0.7, 0.2, 0.2, 0.2})};
  sweeps[2].cells[3] = {std::nullopt, "boom"};
  auto best = best_per_construct(sweeps);
  REQUIRE(best.size() == 3);
  CHECK(best[0].construct == "b");
  CHECK(best[1].construct == "a");  // ties with c; input order kept
  CHECK(best[2].construct == "c");
  CHECK(best[1].cell == CellIndex{0, 1});
  CHECK(best[0].cell == CellIndex{0, 0});
}

TEST_CASE("graded constructs rank by planted strength") {
  auto fx = make_graded_constructs(600, 4, 31);
  std::vector<SweepResult> sweeps;
  for (const auto& construct : constructs()) {
    const std::string name(construct.name);
    auto y = fx.labels.binary_labels(name);
    auto split = make_split(y.size(), construct_split_seed(42, name), y, name);
    auto s = sweep_heads(fx.acts, y, split, ProbeConfig::linear(), 2);
    s.construct = name;
    sweeps.push_back(std::move(s));
  }
  auto best = best_per_construct(sweeps);
  for (std::size_t i = 1; i < best.size(); ++i) CHECK(best[i - 1].best >= best[i].best);
  std::vector<double> strength, score;
  for (const auto& e : best) {
    const auto c = *construct_index(e.construct);
    strength.push_back(fx.strengths[c]);
    score.push_back(e.best);
    if (fx.strengths[c] >= 1.2) {
      CHECK(e.cell == CellIndex{static_cast<int>(c / 8), static_cast<int>(c % 8)});
    }
  }
  CHECK(spearman(strength, score) >= 0.9);
}
