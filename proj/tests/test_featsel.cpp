#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "qvp/classic/tree.h"
#include "qvp/error.h"
#include "qvp/featsel.h"

using namespace qvp;
using namespace qvp::classic;

namespace {

// Feature 0 carries the label plus small noise; the rest are pure noise.
Matrix informative_matrix(std::size_t n, std::size_t d, std::vector<int>& y, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix x(n, d);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 4);
    x(i, 0) = y[i] + 0.1 * noise(rng);
    for (std::size_t j = 1; j < d; ++j) x(i, j) = noise(rng);
  }
  return x;
}

}  // namespace

TEST_CASE("gini fixtures") {
  CHECK(gini({4, 0, 0, 0}) == 0.0);
  CHECK(gini({2, 2, 0, 0}) == doctest::Approx(0.5));
  CHECK(gini({1, 1, 1, 1}) == doctest::Approx(0.75));
  CHECK(gini({0, 0, 0, 0}) == 0.0);
}

TEST_CASE("decision tree splits a 1-D set at the midpoint") {
  Matrix x(10, 1);
  std::vector<int> y(10);
  for (std::size_t i = 0; i < 10; ++i) {
    x(i, 0) = static_cast<double>(i + 1);
    y[i] = i < 5 ? 0 : 1;
  }
  const auto tree = DecisionTree::fit(x, y, {}, TreeParams{});
  REQUIRE(tree.nodes().size() == 3);
  CHECK(tree.nodes()[0].feature == 0);
  CHECK(tree.nodes()[0].threshold == 5.5);
  CHECK(tree.predict(x) == y);
}

TEST_CASE("decision tree ties prefer the lowest feature") {
  Matrix x(4, 3);
  const std::vector<int> y{0, 0, 1, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = y[i] * 2.0 + (j == 0 ? 0.0 : 1.0);
  }
  const auto tree = DecisionTree::fit(x, y, {}, TreeParams{});
  CHECK(tree.nodes()[0].feature == 0);
}

TEST_CASE("unlimited tree fits distinct vectors exactly") {
  Rng rng(2);
  Matrix x(60, 3);
  std::vector<int> y(60);
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = uniform_real(rng, -1, 1);
    y[i] = static_cast<int>(uniform_int(rng, 0, 3));
  }
  const auto tree = DecisionTree::fit(x, y, {}, TreeParams{});
  CHECK(tree.predict(x) == y);
  TreeParams shallow;
  shallow.max_depth = 2;
  CHECK(DecisionTree::fit(x, y, {}, shallow).depth() <= 2);
  const auto restored = DecisionTree::from_json(tree.to_json());
  CHECK(restored.predict(x) == y);
}

TEST_CASE("random forest is deterministic and jobs-independent") {
  std::vector<int> y;
  const auto x = informative_matrix(80, 6, y, 3);
  ForestParams p;
  p.n_trees = 20;
  const auto a = RandomForest::fit(x, y, p, 7, 1);
  const auto b = RandomForest::fit(x, y, p, 7, 3);
  REQUIRE(a.trees().size() == 20);
  CHECK(a.to_json() == b.to_json());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) hits += a.predict(x.row(i)) == y[i];
  CHECK(hits >= 76);
}

TEST_CASE("importances single out the informative feature") {
  std::vector<int> y;
  const auto x = informative_matrix(200, 10, y, 11);
  // Oracle: rounding feature 0 alone recovers the label.
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) hits += std::lround(x(i, 0)) == y[i];
  REQUIRE(hits == x.rows());
  const auto r = forest_importances(x, y, 100, 1);
  CHECK(std::accumulate(r.importance.begin(), r.importance.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.order[0] == 0);
  CHECK(r.importance[0] > 0.5);
  for (double v : r.importance) CHECK(v >= 0.0);

  const auto counts = forest_importances(x, y, 50, 1, ImportanceMethod::kSplitCount);
  CHECK(std::accumulate(counts.importance.begin(), counts.importance.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("duplicated informative column shares its importance") {
  // Moderately informative column: label plus unit noise.
  Rng rng(13);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = 200, d = 20;
  Matrix x(n, d), dup(n, d + 1);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 4);
    x(i, 0) = y[i] + noise(rng);
    for (std::size_t j = 1; j < d; ++j) x(i, j) = noise(rng);
    for (std::size_t j = 0; j < d; ++j) dup(i, j) = x(i, j);
    dup(i, d) = x(i, 0);
  }
  const auto single = forest_importances(x, y, 100, 5);
  const auto doubled = forest_importances(dup, y, 100, 5);
  const double pair = doubled.importance[0] + doubled.importance[d];
  CHECK(std::abs(pair - single.importance[0]) < 0.1);
  CHECK(doubled.importance[0] > 0.25 * pair);
  CHECK(doubled.importance[d] > 0.25 * pair);
}

TEST_CASE("a duplicated dominant column gains combined importance") {
  // With sqrt(d) candidates per split, two copies are drawn more often than one.
  std::vector<int> y;
  const auto x = informative_matrix(200, 10, y, 13);
  Matrix dup(x.rows(), 11);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < 10; ++j) dup(i, j) = x(i, j);
    dup(i, 10) = x(i, 0);
  }
  const auto single = forest_importances(x, y, 100, 5);
  const auto doubled = forest_importances(dup, y, 100, 5);
  CHECK(doubled.importance[0] + doubled.importance[10] >= single.importance[0]);
}

TEST_CASE("degenerate labels") {
  Matrix x(5, 2, 1.0);
  const std::vector<int> y(5, 2);
  CHECK_THROWS_AS(forest_importances(x, y, 10, 0), DataError);
}

TEST_CASE("top-k selection") {
  const auto r = make_ranking({0.1, 0.3, 0.3, 0.05, 0.25});
  CHECK(r.order == std::vector<std::size_t>{1, 2, 4, 0, 3});
  CHECK(select_top_k(r, 1) == std::vector<std::size_t>{1});
  CHECK(select_top_k(r, 2) == std::vector<std::size_t>{1, 2});
  CHECK(select_top_k(r, 4) == std::vector<std::size_t>{1, 2, 4, 0});
  CHECK_THROWS_AS(select_top_k(r, 3), ConfigError);
  CHECK(select_top_k(r, 3, true).size() == 3);
  CHECK_THROWS_AS(select_top_k(r, 8), ConfigError);
  CHECK(is_valid_select_k(32));
  CHECK_FALSE(is_valid_select_k(0));

  // Nesting: the top k is a prefix of the top 2k.
  std::vector<double> imp(40);
  Rng rng(1);
  for (double& v : imp) v = uniform_real(rng, 0, 1);
  const auto big = make_ranking(imp);
  for (std::size_t k : {1u, 2u, 4u, 8u, 16u}) {
    const auto small = select_top_k(big, k);
    const auto larger = select_top_k(big, 2 * k);
    CHECK(std::equal(small.begin(), small.end(), larger.begin()));
  }
}
