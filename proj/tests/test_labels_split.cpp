#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "headprobe/common.hpp"
#include "headprobe/fixtures.hpp"
#include "headprobe/labels.hpp"
#include "headprobe/split.hpp"

using namespace headprobe;

TEST_CASE("binarize threshold at 3") {
  CHECK(binarize(2) == 0);
  CHECK(binarize(3) == 1);
  CHECK(binarize(5) == 1);
  CHECK(binarize(1) == 0);
  CHECK_THROWS_WITH_AS(binarize(0), doctest::Contains("0"), InvalidArgument);
  CHECK_THROWS_WITH_AS(binarize(6), doctest::Contains("6"), InvalidArgument);
}

TEST_CASE("binarize is monotone") {
  for (int a = 1; a <= 5; ++a) {
    for (int b = a; b <= 5; ++b) CHECK(binarize(a) <= binarize(b));
  }
}

TEST_CASE("construct table has the 32 probed variables") {
  const auto& cs = constructs();
  CHECK(cs.size() == 32);
  std::size_t counts[4] = {};
  std::set<std::string_view> names;
  for (const auto& c : cs) {
    ++counts[static_cast<int>(c.group)];
    names.insert(c.name);
  }
  CHECK(names.size() == 32);
  CHECK(counts[0] == 20);
  CHECK(counts[1] == 8);
  CHECK(counts[2] == 2);
  CHECK(counts[3] == 2);
  for (auto n : {"fairness", "certainty", "accountability_self", "external_normative_significance",
                 "intent_to_repurchase", "trustworthiness", "perceived_obstacle", "gratitude"}) {
    CHECK(construct_index(n).has_value());
  }
  CHECK_FALSE(construct_index("trust").has_value());
}

TEST_CASE("label file round trip and validation") {
  auto reviews = make_toy_reviews(12, 3);
  auto table = make_toy_label_table(reviews, 4);
  std::stringstream ss;
  write_labels(table, ss);
  auto back = read_labels(ss);
  REQUIRE(back.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(back[i].id == table[i].id);
    CHECK(back[i].raw == table[i].raw);
    for (std::size_t c = 0; c < kNumConstructs; ++c) CHECK(back[i].binary[c] == binarize(back[i].raw[c]));
  }
  auto trust = back.binary_labels("trustworthiness");
  for (std::size_t i = 0; i < 12; ++i) CHECK(trust[i] == reviews[i].label);

  SUBCASE("out-of-range score") {
    std::string line;
    std::stringstream src;
    write_labels(table, src);
    std::getline(src, line);
    auto pos = line.find("\"fairness\":");
    line.replace(pos + 11, 1, "7");
    std::istringstream bad(line);
    CHECK_THROWS_WITH_AS(read_labels(bad), doctest::Contains("fairness"), FormatError);
  }
  SUBCASE("missing construct field") {
    std::istringstream bad(R"({"id":"a","text":"t","fairness":3})");
    CHECK_THROWS_AS(read_labels(bad), FormatError);
  }
  SUBCASE("alignment to activation ids") {
    auto idx = back.align_to({back[3].id, back[0].id});
    CHECK(idx == std::vector<std::size_t>{3, 0});
    CHECK_THROWS_AS(back.align_to({"nope"}), FormatError);
  }
}

TEST_CASE("stratified split of ten balanced samples") {
  std::vector<int> labels{1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  auto s = make_split(10, 7, labels);
  CHECK(s.train_indices.size() == 8);
  REQUIRE(s.test_indices.size() == 2);
  CHECK(labels[s.test_indices[0]] != labels[s.test_indices[1]]);
  CHECK(make_split(10, 7, labels) == s);
}

TEST_CASE("split errors") {
  CHECK_THROWS_AS(make_split(100, 1, std::vector<int>(100, 1)), InvalidArgument);
  CHECK_THROWS_AS(make_split(4, 1, std::vector<int>{0, 1, 0, 1}), InvalidArgument);
  std::vector<int> one_positive(20, 0);
  one_positive[3] = 1;
  CHECK_THROWS_WITH(make_split(20, 1, one_positive), doctest::Contains("cannot stratify"));
  CHECK_THROWS_AS(make_split(6, 1, std::vector<int>{0, 1, 0, 1, 0}), InvalidArgument);
}

TEST_CASE("split invariants over random label vectors") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + rng() % 300;
    std::vector<int> labels(n);
    const double p = 0.1 + 0.8 * (rng() % 1000) / 1000.0;
    std::bernoulli_distribution b(p);
    for (auto& l : labels) l = b(rng);
    const auto ones = std::count(labels.begin(), labels.end(), 1);
    if (ones < 2 || static_cast<std::size_t>(ones) > n - 2) continue;
    auto s = make_split(n, rng(), labels);
    std::vector<std::size_t> all = s.train_indices;
    all.insert(all.end(), s.test_indices.begin(), s.test_indices.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == n);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(all[i] == i);
    const auto expected = std::llround(0.2 * static_cast<double>(n));
    CHECK(std::abs(static_cast<long long>(s.test_indices.size()) - expected) <= 1);
    for (int cls : {0, 1}) {
      auto in_test = std::count_if(s.test_indices.begin(), s.test_indices.end(), [&](auto i) { return labels[i] == cls; });
      auto in_train = std::count_if(s.train_indices.begin(), s.train_indices.end(), [&](auto i) { return labels[i] == cls; });
      CHECK(in_test >= 1);
      CHECK(in_train >= 1);
      const double total = static_cast<double>(in_test + in_train);
      CHECK(std::abs(static_cast<double>(in_test) - 0.2 * total) <= 1.0);
    }
  }
}

TEST_CASE("different seeds give different splits") {
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
  int differing = 0;
  for (std::uint64_t pair = 0; pair < 100; ++pair) {
    auto a = make_split(labels.size(), derive_seed(11, pair, 0), labels);
    auto b = make_split(labels.size(), derive_seed(11, pair, 1), labels);
    differing += a.test_indices != b.test_indices;
  }
  CHECK(differing >= 99);
}

TEST_CASE("per-construct split seeds are stable and distinct") {
  CHECK(construct_split_seed(42, "fairness") == construct_split_seed(42, "fairness"));
  CHECK(construct_split_seed(42, "fairness") != construct_split_seed(42, "certainty"));
  CHECK(construct_split_seed(42, "fairness") != construct_split_seed(43, "fairness"));
}
