#include "qvp/featsel.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "qvp/classic/tree.h"
#include "qvp/error.h"

namespace qvp {

FeatureRanking make_ranking(std::vector<double> importance) {
  FeatureRanking r;
  r.order.resize(importance.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  r.importance = std::move(importance);
  return r;
}

FeatureRanking forest_importances(const Matrix& x, std::span<const int> y, std::size_t n_trees, std::uint64_t seed,
                                  ImportanceMethod method, int jobs) {
  if (n_trees < 1) throw ConfigError("forest_importances: n_trees must be >= 1");
  if (x.rows() != y.size()) throw ContractError("forest_importances: X and y differ in length");
  if (std::set<int>(y.begin(), y.end()).size() < 2) throw DataError("degenerate labels");

  classic::ForestParams params;
  params.n_trees = n_trees;
  const auto forest = classic::RandomForest::fit(x, y, params, seed, jobs);

  const std::size_t d = x.cols();
  std::vector<double> total(d, 0.0);
  for (const auto& tree : forest.trees()) {
    std::vector<double> mdi(d, 0.0), counts(d, 0.0);
    tree.accumulate_importance(mdi, counts);
    auto& source = method == ImportanceMethod::kImpurityDecrease ? mdi : counts;
    const double sum = std::accumulate(source.begin(), source.end(), 0.0);
    if (sum <= 0.0) continue;  // a single-leaf tree carries no information
    for (std::size_t f = 0; f < d; ++f) total[f] += source[f] / sum;
  }
  const double sum = std::accumulate(total.begin(), total.end(), 0.0);
  if (sum > 0.0) {
    for (double& v : total) v /= sum;
  } else {
    std::fill(total.begin(), total.end(), 1.0 / static_cast<double>(d));
  }
  return make_ranking(std::move(total));
}

bool is_valid_select_k(std::size_t k) {
  return std::find(std::begin(kSelectSizes), std::end(kSelectSizes), k) != std::end(kSelectSizes);
}

std::vector<std::size_t> select_top_k(const FeatureRanking& ranking, std::size_t k, bool allow_override) {
  if (!allow_override && !is_valid_select_k(k)) {
    throw ConfigError("select_top_k: k must be one of 1, 2, 4, 8, 16, 32 (got " + std::to_string(k) + ")");
  }
  if (k < 1 || k > ranking.order.size()) {
    throw ConfigError("select_top_k: k=" + std::to_string(k) + " outside 1.." + std::to_string(ranking.order.size()));
  }
  return {ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(k)};
}

void write_ranking_csv(const std::filesystem::path& path, const FeatureRanking& ranking,
                       std::span<const std::string> names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "rank,feature,importance\n";
  for (std::size_t i = 0; i < ranking.order.size(); ++i) {
    const std::size_t f = ranking.order[i];
    out << i + 1 << ',' << (f < names.size() ? names[f] : std::to_string(f)) << ',' << ranking.importance[f] << '\n';
  }
}

}  // namespace qvp
