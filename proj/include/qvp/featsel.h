#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qvp/matrix.h"

namespace qvp {

enum class ImportanceMethod {
  kImpurityDecrease,  // normalized mean decrease in Gini impurity
  kSplitCount,        // how often a feature is chosen for a split
};

struct FeatureRanking {
  std::vector<double> importance;  // sums to 1
  std::vector<std::size_t> order;  // descending importance, ties by ascending index
};

/// Builds the ordering for a set of importances.
FeatureRanking make_ranking(std::vector<double> importance);

/// Trains a random forest (bootstrap, Gini, sqrt(d) features per split) and
/// ranks features by importance. Throws DataError("degenerate labels") when
/// fewer than two classes are present.
FeatureRanking forest_importances(const Matrix& x, std::span<const int> y, std::size_t n_trees,
                                  std::uint64_t seed,
                                  ImportanceMethod method = ImportanceMethod::kImpurityDecrease, int jobs = 1);

/// Allowed subset sizes.
inline constexpr std::size_t kSelectSizes[] = {1, 2, 4, 8, 16, 32};
bool is_valid_select_k(std::size_t k);

/// The first k entries of the ranking order. k outside {1,2,4,8,16,32} is a
/// ConfigError unless `allow_override` is set (then 1 <= k <= d).
std::vector<std::size_t> select_top_k(const FeatureRanking& ranking, std::size_t k, bool allow_override = false);

void write_ranking_csv(const std::filesystem::path& path, const FeatureRanking& ranking,
                       std::span<const std::string> names);

}  // namespace qvp
