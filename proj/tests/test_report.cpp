#include <cmath>
#include <cstdio>
#include <sstream>

#include "doctest.h"
#include "headprobe/heatmap.hpp"
#include "headprobe/report.hpp"
#include "oracles.hpp"

using namespace headprobe;

namespace {

SweepResult synthetic_sweep(const std::vector<double>& acc, int n_layers, int n_heads) {
  SweepResult s;
  s.construct = "trustworthiness";
  s.n_layers = n_layers;
  s.n_heads = n_heads;
  for (double a : acc) {
    ProbeMetrics m;
    m.accuracy = a;
    m.macro_f1 = a - 0.01;
    m.f1_low = 0.1;
    m.f1_high = 1.0 / 3.0;
    m.weighted_f1 = 0.2;
    m.counts = {1, 2, 3, 4};
    s.cells.push_back({m, ""});
  }
  return s;
}

std::vector<double> ramp(int n) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(0.5 + 0.04 * i);
  return v;
}

}  // namespace

TEST_CASE("average ranks and Spearman") {
  const std::vector<double> v{10.0, 20.0, 20.0, 5.0};
  CHECK(average_ranks(v) == std::vector<double>{2.0, 3.5, 3.5, 1.0});
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{5, 6, 7, 8, 100};
  const std::vector<double> r{5, 4, 3, 2, 1};
  const std::vector<double> flat{2, 2, 2, 2, 2};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, r) == doctest::Approx(-1.0));
  CHECK(spearman(flat, flat) == 1.0);
  CHECK(spearman(a, flat) == 0.0);
  const std::vector<double> c{1, 3, 2, 5, 4};
  CHECK(spearman(a, c) == doctest::Approx(0.8));  // 1 - 6*4/(5*24)
}

TEST_CASE("comparing a run with itself") {
  auto s = synthetic_sweep(ramp(12), 6, 2);
  auto cmp = compare_runs(s, s);
  for (double d : cmp.accuracy_delta) CHECK(d == 0.0);
  for (double d : cmp.macro_f1_delta) CHECK(d == 0.0);
  CHECK(cmp.rank_correlation == 1.0);
  CHECK(cmp.base_peak == cmp.tuned_peak);
  CHECK(cmp.structure_preserved());
}

TEST_CASE("uniform accuracy shift") {
  auto base = synthetic_sweep(ramp(12), 6, 2);
  auto shifted_acc = ramp(12);
  for (auto& a : shifted_acc) a += 0.05;
  auto tuned = synthetic_sweep(shifted_acc, 6, 2);
  auto cmp = compare_runs(base, tuned);
  for (double d : cmp.accuracy_delta) CHECK(d == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(cmp.rank_correlation == 1.0);
  CHECK(cmp.mean_tuned_accuracy() - cmp.mean_base_accuracy() == doctest::Approx(0.05));
  CHECK(cmp.structure_preserved());
}

TEST_CASE("reversed layer profile") {
  auto acc = ramp(6);
  auto base = synthetic_sweep(acc, 6, 1);
  std::reverse(acc.begin(), acc.end());
  auto tuned = synthetic_sweep(acc, 6, 1);
  auto cmp = compare_runs(base, tuned);
  CHECK(cmp.rank_correlation == doctest::Approx(-1.0));
  CHECK(cmp.base_peak.layer == 5);
  CHECK(cmp.tuned_peak.layer == 0);
  CHECK_FALSE(cmp.structure_preserved());
}

TEST_CASE("comparison errors and failed cells") {
  auto a = synthetic_sweep(ramp(4), 2, 2);
  auto b = synthetic_sweep(ramp(6), 3, 2);
  CHECK_THROWS_AS(compare_runs(a, b), InvalidArgument);
  auto c = a;
  c.construct = "helpfulness";
  CHECK_THROWS_AS(compare_runs(a, c), InvalidArgument);
  auto d = a;
  d.cells[1] = {std::nullopt, "failed"};
  auto cmp = compare_runs(a, d);
  CHECK(std::isnan(cmp.accuracy_delta[1]));
  CHECK(cmp.accuracy_delta[0] == 0.0);
  const auto jsonl = comparison_jsonl(cmp);
  CHECK(jsonl.rfind("{\"kind\":\"summary\"", 0) == 0);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 5);
}

TEST_CASE("generation evaluation against an oracle") {
  std::vector<LabeledReview> reviews;
  for (int i = 0; i < 20; ++i) reviews.push_back({"id" + std::to_string(i), i % 3 == 0 ? "good" : "bad", i % 2});
  auto by_word = [](std::string_view t) {
    return t == "good" ? Classification{1, 1.0, 0.0} : Classification{0, 0.0, 1.0};
  };
  std::vector<ModelVariant> variants{{"always_high", [](std::string_view) { return Classification{1, 2.0, 1.0}; }},
                                     {"by_word", by_word}};
  auto eval = generation_eval(variants, reviews);
  REQUIRE(eval.variants.size() == 2);
  std::vector<int> y, high(20, 1), word;
  for (const auto& r : reviews) {
    y.push_back(r.label);
    word.push_back(r.text == "good" ? 1 : 0);
  }
  CHECK(eval.variants[0].metrics == oracle::brute_metrics(y, high));
  CHECK(eval.variants[0].metrics.f1_low == 0.0);
  CHECK(eval.variants[1].metrics == oracle::brute_metrics(y, word));
  const auto table = generation_eval_table(eval);
  CHECK(table.rfind("variant,acc,macro_f1,w_f1,f1_low,f1_high,n\n", 0) == 0);
  CHECK(table.find("always_high,0.5,") != std::string::npos);
  const auto preds = generation_predictions_table(eval);
  CHECK(std::count(preds.begin(), preds.end(), '\n') == 41);

  std::vector<ModelVariant> broken{{"broken", [](std::string_view) -> Classification { throw std::runtime_error("x"); }}};
  CHECK_THROWS_WITH(generation_eval(broken, reviews), doctest::Contains("sample id0"));
}

TEST_CASE("sweep table round trip") {
  auto s = synthetic_sweep(ramp(6), 3, 2);
  s.cells[4] = {std::nullopt, "probe failed, badly"};
  s.tap = TapKind::HeadPreProjection;
  s.concat_heads = false;
  const auto text = sweep_table(s);
  std::istringstream in(text);
  auto back = parse_sweep_table(in);
  CHECK(back.construct == s.construct);
  CHECK(back.n_layers == 3);
  CHECK(back.n_heads == 2);
  for (std::size_t i = 0; i < s.cells.size(); ++i) CHECK(back.cells[i].metrics == s.cells[i].metrics);
  CHECK(back.cells[4].error == "probe failed; badly");
  CHECK(sweep_table(back) == text);

  s.concat_heads = true;
  s.n_heads = 1;
  s.cells.resize(3);
  s.cells[2] = s.cells[0];
  std::istringstream in2(sweep_table(s));
  CHECK(parse_sweep_table(in2).concat_heads);

  std::istringstream junk("hello\n1,2\n");
  CHECK_THROWS_AS(parse_sweep_table(junk), FormatError);
}

TEST_CASE("diff map table round trip") {
  DiffMap m;
  m.mu_high = Grid(2, 2);
  m.mu_high.values = {0.1, 0.2, 1.0 / 3.0, 1e-300};
  m.mu_low = Grid(2, 2, 0.25);
  m.delta = Grid(2, 2);
  for (std::size_t i = 0; i < 4; ++i) m.delta.values[i] = m.mu_high.values[i] - m.mu_low.values[i];
  m.normalized = normalize_by_max_abs(m.delta);
  std::istringstream in(diffmap_table(m));
  auto back = parse_diffmap_table(in);
  CHECK(back.mu_high == m.mu_high);
  CHECK(back.mu_low == m.mu_low);
  CHECK(back.delta == m.delta);
  CHECK(back.normalized == m.normalized);
}

TEST_CASE("palettes") {
  CHECK(palette_color(Palette::Diverging, -1.0, -1.0, 1.0) == Rgb{33, 102, 172});
  CHECK(palette_color(Palette::Diverging, 0.0, -1.0, 1.0) == Rgb{247, 247, 247});
  CHECK(palette_color(Palette::Diverging, 1.0, -1.0, 1.0) == Rgb{178, 24, 43});
  CHECK(palette_color(Palette::Diverging, 5.0, -1.0, 1.0) == Rgb{178, 24, 43});
  CHECK(palette_color(Palette::Sequential, 0.7, 0.7, 0.7) == palette_color(Palette::Sequential, 1.0, 0.0, 1.0));
}

TEST_CASE("heatmap rendering") {
  Grid g(3, 4);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = 0.5 + 0.01 * static_cast<double>(i);
  HeatmapStyle style;
  style.title = "accuracy";
  const auto svg = render_heatmap_svg(g, style);
  CHECK(svg == render_heatmap_svg(g, style));
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 12);

  Grid one(1, 1, 0.8);
  CHECK_NOTHROW(render_heatmap_svg(one, style));
  Grid flat(2, 2, 0.6);
  const auto flat_svg = render_heatmap_svg(flat, style);
  const auto top = palette_color(Palette::Sequential, 1.0, 0.0, 1.0);
  char fill[8];
  std::snprintf(fill, sizeof fill, "#%02x%02x%02x", top.r, top.g, top.b);
  CHECK(flat_svg.find(fill) != std::string::npos);

  Grid holes(1, 2, 0.5);
  holes.values[1] = std::nan("");
  CHECK_THROWS_AS(render_heatmap_svg(holes, style), InvalidArgument);
  CHECK_NOTHROW(render_heatmap_svg(holes, style, {false, true}));

  std::istringstream in(grid_to_table(g, "accuracy"));
  CHECK(parse_grid_table(in) == g);
}
