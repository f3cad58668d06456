#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvp/matrix.h"
#include "qvp/nn/train.h"

namespace qvp::classic {

enum class ClassicKind { kKnn, kSvmLinear, kSvmRbf, kDtree, kRforest, kAdaboost, kGnb, kQda, kSlp };

std::string kind_name(ClassicKind kind);
ClassicKind classic_kind_from_name(const std::string& name);
std::vector<ClassicKind> all_classic_kinds();

inline constexpr double kGnbVarianceFloor = 1e-9;
inline constexpr int kLinearSvmEpochs = 1000;
inline constexpr double kLinearSvmLearningRate = 1e-3;
inline constexpr double kSmoTolerance = 1e-3;

/// Model kind plus every hyperparameter; fields unused by a kind are ignored.
struct ClassicModelSpec {
  ClassicKind kind = ClassicKind::kKnn;
  int k = 5;
  double c = 1.0;
  double gamma = 0.1;
  int max_depth = -1;  // -1: unlimited
  std::size_t min_samples_leaf = 1;
  std::size_t n_trees = 100;
  std::size_t n_stumps = 50;
  double shrinkage = 1e-2;
  nn::TrainConfig slp = nn::TrainConfig::for_kind(nn::NetKind::kSlp);
  std::uint64_t seed = 0;
  bool allow_override = false;

  /// ConfigError for values outside the default grid unless allow_override.
  void validate() const;
  /// Short "kind key=value" string naming the hyperparameters that matter.
  std::string describe() const;
  nlohmann::json hyperparameters() const;

  nlohmann::json to_json() const;
  static ClassicModelSpec from_json(const nlohmann::json& j);
};

/// Candidate specs in declaration order: k {1,3,5,7,9}; C {0.1,1,10};
/// gamma {0.01,0.1,1}; max_depth {3,5,10,none}; n_trees {10,50,100};
/// n_stumps {25,50,100}; shrinkage {1e-3,1e-2,1e-1}; slp over the learning-rate grid.
std::vector<ClassicModelSpec> default_grid(ClassicKind kind);

class ClassicImpl;

struct ClassicTrainedModel {
  ClassicModelSpec spec;
  std::size_t n_features = 0;
  double seconds = 0.0;
  std::shared_ptr<const ClassicImpl> impl;

  int predict(std::span<const double> row) const;
  std::vector<int> predict(const Matrix& x) const;

  nlohmann::json to_json() const;
  static ClassicTrainedModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ClassicTrainedModel load(const std::filesystem::path& path);
};

/// Fits on standardized features with labels in 0..3. GNB and QDA throw
/// DataError("insufficient class support") when a class has fewer than two rows.
ClassicTrainedModel fit(const ClassicModelSpec& spec, const Matrix& x, std::span<const int> y, int jobs = 1);

}  // namespace qvp::classic
