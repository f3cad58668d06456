#include "qvp/classic/tree.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qvp/error.h"
#include "qvp/parallel.h"

namespace qvp::classic {

double gini(const ClassWeights& w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double sum_sq = 0.0;
  for (double v : w) sum_sq += (v / total) * (v / total);
  return std::max(0.0, 1.0 - sum_sq);
}

namespace {

int majority(const ClassWeights& w) {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    if (w[static_cast<std::size_t>(c)] > w[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double decrease = -1.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::span<const int> y, std::span<const double> w, const TreeParams& params,
              Rng* rng)
      : x_(x), y_(y), w_(w), params_(params), rng_(rng) {}

  std::vector<TreeNode> build(std::vector<std::size_t> rows) {
    grow(std::move(rows), 0);
    return std::move(nodes_);
  }

 private:
  ClassWeights histogram(std::span<const std::size_t> rows) const {
    ClassWeights h{};
    for (std::size_t r : rows) h[static_cast<std::size_t>(y_[r])] += w_[r];
    return h;
  }

  std::vector<std::size_t> candidate_features() {
    std::vector<std::size_t> features(x_.cols());
    std::iota(features.begin(), features.end(), 0);
    if (params_.max_features > 0 && params_.max_features < x_.cols()) {
      std::shuffle(features.begin(), features.end(), *rng_);
      features.resize(params_.max_features);
      std::sort(features.begin(), features.end());
    }
    return features;
  }

  Split best_split(std::span<const std::size_t> rows, const ClassWeights& parent) {
    Split best;
    const double parent_weight = std::accumulate(parent.begin(), parent.end(), 0.0);
    const double parent_term = parent_weight * gini(parent);
    std::vector<std::size_t> order(rows.begin(), rows.end());
    for (std::size_t f : candidate_features()) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = x_(a, f), vb = x_(b, f);
        return va < vb || (va == vb && a < b);
      });
      ClassWeights left{};
      double left_weight = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t r = order[i];
        left[static_cast<std::size_t>(y_[r])] += w_[r];
        left_weight += w_[r];
        const double v = x_(r, f), next = x_(order[i + 1], f);
        if (!(next > v)) continue;
        const std::size_t n_left = i + 1, n_right = order.size() - n_left;
        if (n_left < params_.min_samples_leaf || n_right < params_.min_samples_leaf) continue;
        ClassWeights right;
        for (std::size_t c = 0; c < right.size(); ++c) right[c] = parent[c] - left[c];
        const double right_weight = parent_weight - left_weight;
        const double decrease = parent_term - left_weight * gini(left) - right_weight * gini(right);
        // Strict improvement keeps the earliest (feature, threshold) on ties.
        if (decrease > best.decrease + 1e-12 * std::max(1.0, parent_term)) {
          best.feature = static_cast<int>(f);
          best.threshold = 0.5 * (v + next);
          best.decrease = decrease;
        }
      }
    }
    return best;
  }

  int grow(std::vector<std::size_t> rows, int depth) {
    const ClassWeights h = histogram(rows);
    const int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    {
      TreeNode& node = nodes_.back();
      node.label = majority(h);
      node.weight = std::accumulate(h.begin(), h.end(), 0.0);
      node.impurity = gini(h);
    }
    const bool depth_ok = params_.max_depth < 0 || depth < params_.max_depth;
    if (!depth_ok || nodes_[static_cast<std::size_t>(index)].impurity <= 0.0 ||
        rows.size() < 2 * params_.min_samples_leaf) {
      return index;
    }
    const Split split = best_split(rows, h);
    if (split.feature < 0) return index;

    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      (x_(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    TreeNode& node = nodes_[static_cast<std::size_t>(index)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return index;
  }

  const Matrix& x_;
  std::span<const int> y_;
  std::span<const double> w_;
  const TreeParams& params_;
  Rng* rng_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

DecisionTree DecisionTree::fit(const Matrix& x, std::span<const int> y, std::span<const double> weights,
                               const TreeParams& params, Rng* rng) {
  if (x.rows() != y.size()) throw ContractError("DecisionTree::fit: X and y differ in length");
  if (x.rows() == 0) throw ContractError("DecisionTree::fit: empty training set");
  if (!weights.empty() && weights.size() != y.size()) {
    throw ContractError("DecisionTree::fit: weights and y differ in length");
  }
  if (params.max_features > 0 && params.max_features < x.cols() && rng == nullptr) {
    throw ContractError("DecisionTree::fit: feature subsampling needs an rng");
  }
  for (int label : y) {
    if (label < 0 || label >= kNumClasses) throw ContractError("DecisionTree::fit: label out of range");
  }
  std::vector<double> unit;
  if (weights.empty()) {
    unit.assign(y.size(), 1.0);
    weights = unit;
  }
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (weights[r] > 0.0) rows.push_back(r);
  }
  DecisionTree tree;
  tree.n_features_ = x.cols();
  tree.nodes_ = TreeBuilder(x, y, weights, params, rng).build(std::move(rows));
  return tree;
}

int DecisionTree::predict(std::span<const double> row) const {
  if (row.size() != n_features_) throw ContractError("DecisionTree::predict: dimension mismatch");
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const auto& n = nodes_[i];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes_[i].label;
}

std::vector<int> DecisionTree::predict(const Matrix& x) const {
  std::vector<int> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict(x.row(r));
  return out;
}

void DecisionTree::accumulate_importance(std::vector<double>& mdi, std::vector<double>& split_counts) const {
  for (const auto& n : nodes_) {
    if (n.feature < 0) continue;
    const auto& l = nodes_[static_cast<std::size_t>(n.left)];
    const auto& r = nodes_[static_cast<std::size_t>(n.right)];
    const double decrease = n.weight * n.impurity - l.weight * l.impurity - r.weight * r.impurity;
    mdi[static_cast<std::size_t>(n.feature)] += std::max(0.0, decrease);
    split_counts[static_cast<std::size_t>(n.feature)] += 1.0;
  }
}

int DecisionTree::depth() const {
  std::vector<int> d(nodes_.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes_[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    }
  }
  return best;
}

nlohmann::json DecisionTree::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : nodes_) {
    nodes.push_back({n.feature, n.threshold, n.left, n.right, n.label, n.weight, n.impurity});
  }
  return {{"n_features", n_features_}, {"nodes", nodes}};
}

DecisionTree DecisionTree::from_json(const nlohmann::json& j) {
  DecisionTree t;
  t.n_features_ = j.at("n_features").get<std::size_t>();
  for (const auto& n : j.at("nodes")) {
    TreeNode node;
    node.feature = n.at(0).get<int>();
    node.threshold = n.at(1).get<double>();
    node.left = n.at(2).get<int>();
    node.right = n.at(3).get<int>();
    node.label = n.at(4).get<int>();
    node.weight = n.at(5).get<double>();
    node.impurity = n.at(6).get<double>();
    t.nodes_.push_back(node);
  }
  return t;
}

RandomForest RandomForest::fit(const Matrix& x, std::span<const int> y, const ForestParams& params,
                               std::uint64_t seed, int jobs) {
  if (params.n_trees < 1) throw ConfigError("RandomForest: n_trees must be >= 1");
  if (x.rows() == 0) throw ContractError("RandomForest::fit: empty training set");
  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_samples_leaf = params.min_samples_leaf;
  tp.max_features = params.max_features > 0
                        ? params.max_features
                        : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(x.cols()))));
  RandomForest forest;
  forest.trees_.resize(params.n_trees);
  parallel_for(params.n_trees, jobs, [&](std::size_t t) {
    Rng rng = make_rng(seed, t);
    std::vector<double> counts(x.rows(), 1.0);
    if (params.bootstrap) {
      std::fill(counts.begin(), counts.end(), 0.0);
      std::uniform_int_distribution<std::size_t> pick(0, x.rows() - 1);
      for (std::size_t i = 0; i < x.rows(); ++i) counts[pick(rng)] += 1.0;
    }
    forest.trees_[t] = DecisionTree::fit(x, y, counts, tp, &rng);
  });
  return forest;
}

int RandomForest::predict(std::span<const double> row) const {
  std::array<int, kNumClasses> votes{};
  for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict(row))];
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

nlohmann::json RandomForest::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) trees.push_back(t.to_json());
  return {{"trees", trees}};
}

RandomForest RandomForest::from_json(const nlohmann::json& j) {
  RandomForest f;
  for (const auto& t : j.at("trees")) f.trees_.push_back(DecisionTree::from_json(t));
  return f;
}

}  // namespace qvp::classic
