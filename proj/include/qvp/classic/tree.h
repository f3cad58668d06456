#pragma once

#include <array>
#include <span>
#include <vector>

#include "qvp/audio.h"
#include "qvp/matrix.h"
#include "qvp/random.h"
#include "json.hpp"

namespace qvp::classic {

using ClassWeights = std::array<double, kNumClasses>;

/// Gini impurity 1 - sum(p_k^2) of a weighted class histogram. Zero for an
/// empty or pure node.
double gini(const ClassWeights& w);

struct TreeParams {
  int max_depth = -1;               // -1: unlimited
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;     // 0: all features at every split
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = 0;
  double weight = 0.0;    // total sample weight reaching the node
  double impurity = 0.0;  // Gini of the node
};

/// CART classifier with Gini splits. Thresholds are midpoints between sorted
/// distinct values; ties prefer the lowest feature index, then the lowest
/// threshold. Samples with x <= threshold go left.
class DecisionTree {
 public:
  /// `weights` may be empty (unit weights). Rows with zero weight are ignored.
  /// When params.max_features > 0 each split draws that many candidate
  /// features from `rng` (required in that case).
  static DecisionTree fit(const Matrix& x, std::span<const int> y, std::span<const double> weights,
                          const TreeParams& params, Rng* rng = nullptr);

  int predict(std::span<const double> row) const;
  std::vector<int> predict(const Matrix& x) const;

  /// Adds each split's weighted impurity decrease to `mdi` and one count per
  /// split to `split_counts` (both sized to the feature count).
  void accumulate_importance(std::vector<double>& mdi, std::vector<double>& split_counts) const;

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t n_features() const { return n_features_; }
  int depth() const;

  nlohmann::json to_json() const;
  static DecisionTree from_json(const nlohmann::json& j);

 private:
  std::vector<TreeNode> nodes_;
  std::size_t n_features_ = 0;
};

struct ForestParams {
  std::size_t n_trees = 100;
  int max_depth = -1;
  std::size_t min_samples_leaf = 1;
  /// 0 selects floor(sqrt(d)) features per split.
  std::size_t max_features = 0;
  bool bootstrap = true;
};

/// Bagged CART ensemble; tree t draws from the substream derive_seed(seed, t).
class RandomForest {
 public:
  static RandomForest fit(const Matrix& x, std::span<const int> y, const ForestParams& params,
                          std::uint64_t seed, int jobs = 1);

  /// Majority vote; ties go to the lowest class id.
  int predict(std::span<const double> row) const;

  const std::vector<DecisionTree>& trees() const { return trees_; }

  nlohmann::json to_json() const;
  static RandomForest from_json(const nlohmann::json& j);

 private:
  std::vector<DecisionTree> trees_;
};

}  // namespace qvp::classic
