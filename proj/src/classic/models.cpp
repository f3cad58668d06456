#include "qvp/classic/models.h"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "qvp/audio.h"
#include "qvp/classic/svm.h"
#include "qvp/classic/tree.h"
#include "qvp/error.h"

namespace qvp::classic {

class ClassicImpl {
 public:
  virtual ~ClassicImpl() = default;
  virtual int predict(std::span<const double> row) const = 0;
  virtual nlohmann::json payload() const = 0;
};

namespace {

using Json = nlohmann::json;

int argmax_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return static_cast<int>(best);
}

Json matrix_json(const Matrix& m) { return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", m.data()}}; }

Matrix matrix_from_json(const Json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto v = j.at("values").get<std::vector<double>>();
  if (v.size() != m.rows() * m.cols()) throw DataError("checkpoint matrix has the wrong number of values");
  m.data() = v;
  return m;
}

std::array<std::size_t, kNumClasses> class_counts(std::span<const int> y) {
  std::array<std::size_t, kNumClasses> counts{};
  for (int v : y) ++counts[static_cast<std::size_t>(v)];
  return counts;
}

/// Classes that occur in y; any of them with a single row is an error.
std::vector<std::size_t> supported_classes(std::span<const int> y) {
  std::vector<std::size_t> present;
  const auto counts = class_counts(y);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 1) throw DataError("insufficient class support");
    if (counts[c] > 0) present.push_back(c);
  }
  if (present.size() < 2) throw DataError("insufficient class support");
  return present;
}

constexpr double kAbsentScore = -std::numeric_limits<double>::infinity();

// kNN

class Knn : public ClassicImpl {
 public:
  Knn(Matrix x, std::vector<int> y, int k) : x_(std::move(x)), y_(std::move(y)), k_(k) {}

  int predict(std::span<const double> row) const override {
    const std::size_t n = x_.rows();
    std::vector<std::pair<double, std::size_t>> d(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const auto r = x_.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) acc += (r[j] - row[j]) * (r[j] - row[j]);
      d[i] = {acc, i};
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_), n);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::array<double, kNumClasses> votes{};
    for (std::size_t i = 0; i < k; ++i) votes[static_cast<std::size_t>(y_[d[i].second])] += 1.0;
    return argmax_lowest(votes);
  }

  Json payload() const override { return {{"x", matrix_json(x_)}, {"y", y_}, {"k", k_}}; }
  static std::shared_ptr<Knn> from(const Json& j) {
    return std::make_shared<Knn>(matrix_from_json(j.at("x")), j.at("y").get<std::vector<int>>(), j.at("k").get<int>());
  }

 private:
  Matrix x_;
  std::vector<int> y_;
  int k_;
};

// One-vs-rest linear SVM

class LinearSvm : public ClassicImpl {
 public:
  LinearSvm(Matrix w, std::vector<double> b) : w_(std::move(w)), b_(std::move(b)) {}

  static std::shared_ptr<LinearSvm> fit(const Matrix& x, std::span<const int> y, double c, std::uint64_t seed) {
    const std::size_t n = x.rows(), d = x.cols();
    Matrix w(kNumClasses, d, 0.0);
    std::vector<double> b(kNumClasses, 0.0);
    Rng rng = make_rng(seed, 0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const double reg = 1.0 / static_cast<double>(n);
    for (int epoch = 0; epoch < kLinearSvmEpochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i : order) {
        const auto xi = x.row(i);
        for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
          const double target = y[i] == static_cast<int>(cls) ? 1.0 : -1.0;
          double* wc = &w(cls, 0);
          double margin = b[cls];
          for (std::size_t j = 0; j < d; ++j) margin += wc[j] * xi[j];
          const bool violated = target * margin < 1.0;
          // Per-sample subgradient of 0.5|w|^2 / n + C * hinge.
          for (std::size_t j = 0; j < d; ++j) {
            double g = reg * wc[j];
            if (violated) g -= c * target * xi[j];
            wc[j] -= kLinearSvmLearningRate * g;
          }
          if (violated) b[cls] += kLinearSvmLearningRate * c * target;
        }
      }
    }
    return std::make_shared<LinearSvm>(std::move(w), std::move(b));
  }

  int predict(std::span<const double> row) const override {
    std::array<double, kNumClasses> scores{};
    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
      scores[cls] = b_[cls];
      for (std::size_t j = 0; j < row.size(); ++j) scores[cls] += w_(cls, j) * row[j];
    }
    return argmax_lowest(scores);
  }

  Json payload() const override { return {{"w", matrix_json(w_)}, {"b", b_}}; }
  static std::shared_ptr<LinearSvm> from(const Json& j) {
    return std::make_shared<LinearSvm>(matrix_from_json(j.at("w")), j.at("b").get<std::vector<double>>());
  }

 private:
  Matrix w_;
  std::vector<double> b_;
};

// One-vs-rest RBF SVM

class RbfSvm : public ClassicImpl {
 public:
  RbfSvm(Matrix x, std::vector<std::vector<int>> targets, std::vector<SmoSolution> machines, double gamma)
      : x_(std::move(x)), targets_(std::move(targets)), machines_(std::move(machines)), gamma_(gamma) {}

  static std::shared_ptr<RbfSvm> fit(const Matrix& x, std::span<const int> y, double c, double gamma) {
    std::vector<std::vector<int>> targets;
    std::vector<SmoSolution> machines;
    for (int cls = 0; cls < kNumClasses; ++cls) {
      std::vector<int> t(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] == cls ? 1 : -1;
      machines.push_back(smo_solve(x, t, c, gamma, kSmoTolerance));
      targets.push_back(std::move(t));
    }
    return std::make_shared<RbfSvm>(x, std::move(targets), std::move(machines), gamma);
  }

  int predict(std::span<const double> row) const override {
    std::array<double, kNumClasses> scores{};
    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
      scores[cls] = smo_decision(x_, targets_[cls], machines_[cls], gamma_, row);
    }
    return argmax_lowest(scores);
  }

  Json payload() const override {
    Json machines = Json::array();
    for (std::size_t cls = 0; cls < machines_.size(); ++cls) {
      machines.push_back({{"targets", targets_[cls]}, {"alpha", machines_[cls].alpha}, {"rho", machines_[cls].rho}});
    }
    return {{"x", matrix_json(x_)}, {"gamma", gamma_}, {"machines", machines}};
  }
  static std::shared_ptr<RbfSvm> from(const Json& j) {
    std::vector<std::vector<int>> targets;
    std::vector<SmoSolution> machines;
    for (const auto& m : j.at("machines")) {
      targets.push_back(m.at("targets").get<std::vector<int>>());
      SmoSolution s;
      s.alpha = m.at("alpha").get<std::vector<double>>();
      s.rho = m.at("rho").get<double>();
      machines.push_back(std::move(s));
    }
    return std::make_shared<RbfSvm>(matrix_from_json(j.at("x")), std::move(targets), std::move(machines),
                                    j.at("gamma").get<double>());
  }

 private:
  Matrix x_;
  std::vector<std::vector<int>> targets_;
  std::vector<SmoSolution> machines_;
  double gamma_;
};

// Trees

class TreeModel : public ClassicImpl {
 public:
  explicit TreeModel(DecisionTree tree) : tree_(std::move(tree)) {}
  int predict(std::span<const double> row) const override { return tree_.predict(row); }
  Json payload() const override { return tree_.to_json(); }

 private:
  DecisionTree tree_;
};

class ForestModel : public ClassicImpl {
 public:
  explicit ForestModel(RandomForest forest) : forest_(std::move(forest)) {}
  int predict(std::span<const double> row) const override { return forest_.predict(row); }
  Json payload() const override { return forest_.to_json(); }

 private:
  RandomForest forest_;
};

// SAMME AdaBoost over depth-1 trees

class AdaBoost : public ClassicImpl {
 public:
  AdaBoost(std::vector<DecisionTree> stumps, std::vector<double> alphas)
      : stumps_(std::move(stumps)), alphas_(std::move(alphas)) {}

  static std::shared_ptr<AdaBoost> fit(const Matrix& x, std::span<const int> y, std::size_t n_stumps) {
    const std::size_t n = x.rows();
    const double k = kNumClasses;
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    std::vector<DecisionTree> stumps;
    std::vector<double> alphas;
    TreeParams params;
    params.max_depth = 1;
    for (std::size_t m = 0; m < n_stumps; ++m) {
      auto stump = DecisionTree::fit(x, y, w, params);
      const auto pred = stump.predict(x);
      double err = 0.0, total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        total += w[i];
        if (pred[i] != y[i]) err += w[i];
      }
      err /= total;
      if (err <= 0.0) {
        // A perfect stump decides alone.
        stumps.push_back(std::move(stump));
        alphas.push_back(1.0);
        break;
      }
      if (err >= 1.0 - 1.0 / k) break;
      const double alpha = std::log((1.0 - err) / err) + std::log(k - 1.0);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (pred[i] != y[i]) w[i] *= std::exp(alpha);
        sum += w[i];
      }
      for (double& v : w) v /= sum;
      stumps.push_back(std::move(stump));
      alphas.push_back(alpha);
    }
    if (stumps.empty()) {
      // No stump beats chance: fall back to the unweighted majority stump.
      stumps.push_back(DecisionTree::fit(x, y, {}, params));
      alphas.push_back(1.0);
    }
    return std::make_shared<AdaBoost>(std::move(stumps), std::move(alphas));
  }

  int predict(std::span<const double> row) const override {
    std::array<double, kNumClasses> scores{};
    for (std::size_t m = 0; m < stumps_.size(); ++m) {
      scores[static_cast<std::size_t>(stumps_[m].predict(row))] += alphas_[m];
    }
    return argmax_lowest(scores);
  }

  Json payload() const override {
    Json stumps = Json::array();
    for (const auto& s : stumps_) stumps.push_back(s.to_json());
    return {{"stumps", stumps}, {"alphas", alphas_}};
  }
  static std::shared_ptr<AdaBoost> from(const Json& j) {
    std::vector<DecisionTree> stumps;
    for (const auto& s : j.at("stumps")) stumps.push_back(DecisionTree::from_json(s));
    return std::make_shared<AdaBoost>(std::move(stumps), j.at("alphas").get<std::vector<double>>());
  }

 private:
  std::vector<DecisionTree> stumps_;
  std::vector<double> alphas_;
};

// Gaussian naive Bayes

class Gnb : public ClassicImpl {
 public:
  Gnb(Matrix mean, Matrix var, std::vector<double> log_prior, std::vector<std::size_t> classes)
      : mean_(std::move(mean)), var_(std::move(var)), log_prior_(std::move(log_prior)), classes_(std::move(classes)) {}

  static std::shared_ptr<Gnb> fit(const Matrix& x, std::span<const int> y) {
    auto present = supported_classes(y);
    const std::size_t d = x.cols();
    const auto counts = class_counts(y);
    Matrix mean(kNumClasses, d, 0.0), var(kNumClasses, d, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < d; ++j) mean(static_cast<std::size_t>(y[i]), j) += x(i, j);
    }
    for (std::size_t c : present) {
      for (std::size_t j = 0; j < d; ++j) mean(c, j) /= static_cast<double>(counts[c]);
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto c = static_cast<std::size_t>(y[i]);
      for (std::size_t j = 0; j < d; ++j) var(c, j) += std::pow(x(i, j) - mean(c, j), 2);
    }
    std::vector<double> log_prior(kNumClasses, 0.0);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double count = std::max<double>(1.0, static_cast<double>(counts[c]));
      for (std::size_t j = 0; j < d; ++j) var(c, j) = var(c, j) / count + kGnbVarianceFloor;
      if (counts[c] > 0) log_prior[c] = std::log(static_cast<double>(counts[c]) / static_cast<double>(x.rows()));
    }
    return std::make_shared<Gnb>(std::move(mean), std::move(var), std::move(log_prior), std::move(present));
  }

  int predict(std::span<const double> row) const override {
    std::array<double, kNumClasses> scores;
    scores.fill(kAbsentScore);
    for (std::size_t c : classes_) {
      double s = log_prior_[c];
      for (std::size_t j = 0; j < row.size(); ++j) {
        s -= 0.5 * std::log(2.0 * M_PI * var_(c, j)) + 0.5 * std::pow(row[j] - mean_(c, j), 2) / var_(c, j);
      }
      scores[c] = s;
    }
    return argmax_lowest(scores);
  }

  Json payload() const override {
    return {{"mean", matrix_json(mean_)}, {"var", matrix_json(var_)}, {"log_prior", log_prior_}, {"classes", classes_}};
  }
  static std::shared_ptr<Gnb> from(const Json& j) {
    return std::make_shared<Gnb>(matrix_from_json(j.at("mean")), matrix_from_json(j.at("var")),
                                 j.at("log_prior").get<std::vector<double>>(),
                                 j.at("classes").get<std::vector<std::size_t>>());
  }

 private:
  Matrix mean_, var_;
  std::vector<double> log_prior_;
  std::vector<std::size_t> classes_;
};

// Quadratic discriminant analysis with shrinkage toward the pooled diagonal

class Qda : public ClassicImpl {
 public:
  struct ClassModel {
    std::size_t label = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd precision;
    double log_det = 0.0;
    double log_prior = 0.0;
  };

  explicit Qda(std::vector<ClassModel> classes) : classes_(std::move(classes)) {}

  static std::shared_ptr<Qda> fit(const Matrix& x, std::span<const int> y, double lambda) {
    const auto present = supported_classes(y);
    const std::size_t n = x.rows(), d = x.cols();
    const auto counts = class_counts(y);
    std::vector<Eigen::VectorXd> means(kNumClasses, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)));
    for (std::size_t i = 0; i < n; ++i) {
      means[static_cast<std::size_t>(y[i])] += Eigen::Map<const Eigen::VectorXd>(x.row(i).data(), static_cast<Eigen::Index>(d));
    }
    for (std::size_t c : present) means[c] /= static_cast<double>(counts[c]);
    std::vector<Eigen::MatrixXd> cov(kNumClasses, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(y[i]);
      const Eigen::VectorXd r =
          Eigen::Map<const Eigen::VectorXd>(x.row(i).data(), static_cast<Eigen::Index>(d)) - means[c];
      cov[c] += r * r.transpose();
    }
    for (std::size_t c : present) {
      pooled += cov[c];
      cov[c] /= static_cast<double>(counts[c] - 1);
    }
    pooled /= static_cast<double>(n - present.size());
    const Eigen::VectorXd pooled_diag = pooled.diagonal().array() + kGnbVarianceFloor;

    std::vector<ClassModel> classes;
    for (std::size_t c : present) {
      Eigen::MatrixXd shrunk = (1.0 - lambda) * cov[c];
      shrunk.diagonal() += lambda * pooled_diag;
      shrunk.diagonal().array() += kGnbVarianceFloor;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(shrunk);
      if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
        throw DataError("qda: class " + std::to_string(c) + " covariance is singular; increase the shrinkage");
      }
      ClassModel m;
      m.label = c;
      m.mean = means[c];
      m.precision = ldlt.solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
      m.log_det = ldlt.vectorD().array().log().sum();
      m.log_prior = std::log(static_cast<double>(counts[c]) / static_cast<double>(n));
      classes.push_back(std::move(m));
    }
    return std::make_shared<Qda>(std::move(classes));
  }

  int predict(std::span<const double> row) const override {
    const Eigen::Map<const Eigen::VectorXd> v(row.data(), static_cast<Eigen::Index>(row.size()));
    std::array<double, kNumClasses> scores;
    scores.fill(kAbsentScore);
    for (const auto& m : classes_) {
      const Eigen::VectorXd r = v - m.mean;
      scores[m.label] = m.log_prior - 0.5 * m.log_det - 0.5 * r.dot(m.precision * r);
    }
    return argmax_lowest(scores);
  }

  Json payload() const override {
    Json classes = Json::array();
    for (const auto& m : classes_) {
      classes.push_back({{"label", m.label},
                         {"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
                         {"precision", std::vector<double>(m.precision.data(), m.precision.data() + m.precision.size())},
                         {"log_det", m.log_det},
                         {"log_prior", m.log_prior}});
    }
    return {{"classes", classes}};
  }
  static std::shared_ptr<Qda> from(const Json& j) {
    std::vector<ClassModel> classes;
    for (const auto& c : j.at("classes")) {
      const auto mean = c.at("mean").get<std::vector<double>>();
      const auto prec = c.at("precision").get<std::vector<double>>();
      const auto d = static_cast<Eigen::Index>(mean.size());
      if (prec.size() != mean.size() * mean.size()) throw DataError("checkpoint qda precision has the wrong size");
      ClassModel m;
      m.label = c.at("label").get<std::size_t>();
      m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
      m.precision = Eigen::Map<const Eigen::MatrixXd>(prec.data(), d, d);
      m.log_det = c.at("log_det").get<double>();
      m.log_prior = c.at("log_prior").get<double>();
      classes.push_back(std::move(m));
    }
    return std::make_shared<Qda>(std::move(classes));
  }

 private:
  std::vector<ClassModel> classes_;
};

// Single-layer perceptron through the nn engine

class Slp : public ClassicImpl {
 public:
  explicit Slp(nn::TrainedNetwork net) : net_(std::move(net)) {}

  static std::shared_ptr<Slp> fit(const Matrix& x, std::span<const int> y, const nn::TrainConfig& cfg) {
    nn::TensorDataset ds{nn::Tensor({x.rows(), x.cols()}, x.data()), {y.begin(), y.end()}};
    return std::make_shared<Slp>(nn::train_network(nn::NetworkConfig::slp(x.cols()), ds, cfg));
  }

  int predict(std::span<const double> row) const override {
    return net_.predict(nn::Tensor({1, row.size()}, {row.begin(), row.end()}))[0];
  }
  std::vector<int> predict_all(const Matrix& x) const {
    return net_.predict(nn::Tensor({x.rows(), x.cols()}, x.data()));
  }

  Json payload() const override { return net_.to_json(); }
  static std::shared_ptr<Slp> from(const Json& j) { return std::make_shared<Slp>(nn::TrainedNetwork::from_json(j)); }

 private:
  nn::TrainedNetwork net_;
};

bool contains(std::initializer_list<double> set, double v) {
  return std::any_of(set.begin(), set.end(), [&](double s) { return std::abs(s - v) <= 1e-12 * std::abs(s); });
}

}  // namespace

std::string kind_name(ClassicKind kind) {
  switch (kind) {
    case ClassicKind::kKnn: return "knn";
    case ClassicKind::kSvmLinear: return "svm_linear";
    case ClassicKind::kSvmRbf: return "svm_rbf";
    case ClassicKind::kDtree: return "dtree";
    case ClassicKind::kRforest: return "rforest";
    case ClassicKind::kAdaboost: return "adaboost";
    case ClassicKind::kGnb: return "gnb";
    case ClassicKind::kQda: return "qda";
    case ClassicKind::kSlp: return "slp";
  }
  return "?";
}

std::vector<ClassicKind> all_classic_kinds() {
  return {ClassicKind::kKnn,      ClassicKind::kSvmLinear, ClassicKind::kSvmRbf,
          ClassicKind::kDtree,    ClassicKind::kRforest,   ClassicKind::kAdaboost,
          ClassicKind::kGnb,      ClassicKind::kQda,       ClassicKind::kSlp};
}

ClassicKind classic_kind_from_name(const std::string& name) {
  std::string canon = name;
  std::replace(canon.begin(), canon.end(), '-', '_');
  if (canon == "rf") canon = "rforest";
  for (ClassicKind k : all_classic_kinds()) {
    if (kind_name(k) == canon) return k;
  }
  throw ConfigError("unknown classic model kind '" + name + "'");
}

void ClassicModelSpec::validate() const {
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  if (!(c > 0.0)) throw ConfigError("svm: C must be positive");
  if (!(gamma > 0.0)) throw ConfigError("svm: gamma must be positive");
  if (n_trees < 1) throw ConfigError("rforest: n_trees must be >= 1");
  if (n_stumps < 1) throw ConfigError("adaboost: n_stumps must be >= 1");
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw ConfigError("qda: shrinkage must be in [0, 1]");
  if (min_samples_leaf < 1) throw ConfigError("dtree: min_samples_leaf must be >= 1");
  if (allow_override) return;
  switch (kind) {
    case ClassicKind::kKnn:
      if (!contains({1, 3, 5, 7, 9}, k)) throw ConfigError("knn: k must be one of 1, 3, 5, 7, 9");
      break;
    case ClassicKind::kSvmRbf:
      if (!contains({0.01, 0.1, 1}, gamma)) throw ConfigError("svm_rbf: gamma must be one of 0.01, 0.1, 1");
      [[fallthrough]];
    case ClassicKind::kSvmLinear:
      if (!contains({0.1, 1, 10}, c)) throw ConfigError("svm: C must be one of 0.1, 1, 10");
      break;
    case ClassicKind::kDtree:
      if (max_depth != -1 && !contains({3, 5, 10}, max_depth)) {
        throw ConfigError("dtree: max_depth must be one of 3, 5, 10, none");
      }
      break;
    case ClassicKind::kRforest:
      if (!contains({10, 50, 100}, static_cast<double>(n_trees))) throw ConfigError("rforest: n_trees must be one of 10, 50, 100");
      break;
    case ClassicKind::kAdaboost:
      if (!contains({25, 50, 100}, static_cast<double>(n_stumps))) {
        throw ConfigError("adaboost: n_stumps must be one of 25, 50, 100");
      }
      break;
    case ClassicKind::kQda:
      if (!contains({1e-3, 1e-2, 1e-1}, shrinkage)) throw ConfigError("qda: shrinkage must be one of 0.001, 0.01, 0.1");
      break;
    case ClassicKind::kGnb:
    case ClassicKind::kSlp:
      break;
  }
}

nlohmann::json ClassicModelSpec::hyperparameters() const {
  switch (kind) {
    case ClassicKind::kKnn: return {{"k", k}};
    case ClassicKind::kSvmLinear: return {{"C", c}};
    case ClassicKind::kSvmRbf: return {{"C", c}, {"gamma", gamma}};
    case ClassicKind::kDtree:
      return {{"max_depth", max_depth < 0 ? Json("none") : Json(max_depth)}, {"min_samples_leaf", min_samples_leaf}};
    case ClassicKind::kRforest: return {{"n_trees", n_trees}};
    case ClassicKind::kAdaboost: return {{"n_stumps", n_stumps}};
    case ClassicKind::kGnb: return Json::object();
    case ClassicKind::kQda: return {{"shrinkage", shrinkage}};
    case ClassicKind::kSlp: return {{"learning_rate", slp.learning_rate}, {"batch_size", slp.batch_size}};
  }
  return Json::object();
}

std::string ClassicModelSpec::describe() const {
  std::string s = kind_name(kind);
  const Json params = hyperparameters();
  for (const auto& [key, value] : params.items()) s += " " + key + "=" + value.dump();
  return s;
}

nlohmann::json ClassicModelSpec::to_json() const {
  return {{"kind", kind_name(kind)},     {"k", k},
          {"C", c},                      {"gamma", gamma},
          {"max_depth", max_depth},      {"min_samples_leaf", min_samples_leaf},
          {"n_trees", n_trees},          {"n_stumps", n_stumps},
          {"shrinkage", shrinkage},      {"slp", slp.to_json()},
          {"seed", seed},                {"allow_override", allow_override}};
}

ClassicModelSpec ClassicModelSpec::from_json(const nlohmann::json& j) {
  ClassicModelSpec s;
  s.kind = classic_kind_from_name(j.at("kind").get<std::string>());
  s.k = j.value("k", s.k);
  s.c = j.value("C", s.c);
  s.gamma = j.value("gamma", s.gamma);
  if (j.contains("max_depth") && j.at("max_depth").is_string()) {
    if (j.at("max_depth").get<std::string>() != "none") throw ConfigError("dtree: max_depth must be a number or \"none\"");
    s.max_depth = -1;
  } else {
    s.max_depth = j.value("max_depth", s.max_depth);
  }
  s.min_samples_leaf = j.value("min_samples_leaf", s.min_samples_leaf);
  s.n_trees = j.value("n_trees", s.n_trees);
  s.n_stumps = j.value("n_stumps", s.n_stumps);
  s.shrinkage = j.value("shrinkage", s.shrinkage);
  if (j.contains("slp")) s.slp = nn::TrainConfig::from_json(j.at("slp"));
  s.seed = j.value("seed", s.seed);
  s.allow_override = j.value("allow_override", s.allow_override);
  return s;
}

std::vector<ClassicModelSpec> default_grid(ClassicKind kind) {
  std::vector<ClassicModelSpec> grid;
  ClassicModelSpec base;
  base.kind = kind;
  switch (kind) {
    case ClassicKind::kKnn:
      for (int k : {1, 3, 5, 7, 9}) grid.push_back(base), grid.back().k = k;
      break;
    case ClassicKind::kSvmLinear:
      for (double c : {0.1, 1.0, 10.0}) grid.push_back(base), grid.back().c = c;
      break;
    case ClassicKind::kSvmRbf:
      for (double c : {0.1, 1.0, 10.0}) {
        for (double g : {0.01, 0.1, 1.0}) {
          grid.push_back(base);
          grid.back().c = c;
          grid.back().gamma = g;
        }
      }
      break;
    case ClassicKind::kDtree:
      for (int d : {3, 5, 10, -1}) grid.push_back(base), grid.back().max_depth = d;
      break;
    case ClassicKind::kRforest:
      for (std::size_t t : {10u, 50u, 100u}) grid.push_back(base), grid.back().n_trees = t;
      break;
    case ClassicKind::kAdaboost:
      for (std::size_t m : {25u, 50u, 100u}) grid.push_back(base), grid.back().n_stumps = m;
      break;
    case ClassicKind::kGnb:
      grid.push_back(base);
      break;
    case ClassicKind::kQda:
      for (double l : {1e-3, 1e-2, 1e-1}) grid.push_back(base), grid.back().shrinkage = l;
      break;
    case ClassicKind::kSlp:
      for (double lr : nn::TrainConfig::learning_rate_grid()) grid.push_back(base), grid.back().slp.learning_rate = lr;
      break;
  }
  return grid;
}

int ClassicTrainedModel::predict(std::span<const double> row) const {
  if (!impl) throw ContractError("predict: model is not fitted");
  if (row.size() != n_features) {
    throw ContractError("predict: expected " + std::to_string(n_features) + " features, got " +
                        std::to_string(row.size()));
  }
  return impl->predict(row);
}

std::vector<int> ClassicTrainedModel::predict(const Matrix& x) const {
  if (x.cols() != n_features && x.rows() > 0) {
    throw ContractError("predict: expected " + std::to_string(n_features) + " features, got " +
                        std::to_string(x.cols()));
  }
  if (const auto* slp = dynamic_cast<const Slp*>(impl.get()); slp != nullptr && x.rows() > 0) {
    return slp->predict_all(x);
  }
  std::vector<int> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict(x.row(r));
  return out;
}

nlohmann::json ClassicTrainedModel::to_json() const {
  return {{"format", "qvp-checkpoint"}, {"version", 1},         {"kind", kind_name(spec.kind)},
          {"spec", spec.to_json()},     {"n_features", n_features}, {"seconds", seconds},
          {"seed", spec.seed},          {"payload", impl ? impl->payload() : Json()}};
}

ClassicTrainedModel ClassicTrainedModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "qvp-checkpoint") throw DataError("not a qvp checkpoint");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    ClassicTrainedModel m;
    m.spec = ClassicModelSpec::from_json(j.at("spec"));
    m.n_features = j.at("n_features").get<std::size_t>();
    m.seconds = j.value("seconds", 0.0);
    const auto& p = j.at("payload");
    switch (m.spec.kind) {
      case ClassicKind::kKnn: m.impl = Knn::from(p); break;
      case ClassicKind::kSvmLinear: m.impl = LinearSvm::from(p); break;
      case ClassicKind::kSvmRbf: m.impl = RbfSvm::from(p); break;
      case ClassicKind::kDtree: m.impl = std::make_shared<TreeModel>(DecisionTree::from_json(p)); break;
      case ClassicKind::kRforest: m.impl = std::make_shared<ForestModel>(RandomForest::from_json(p)); break;
      case ClassicKind::kAdaboost: m.impl = AdaBoost::from(p); break;
      case ClassicKind::kGnb: m.impl = Gnb::from(p); break;
      case ClassicKind::kQda: m.impl = Qda::from(p); break;
      case ClassicKind::kSlp: m.impl = Slp::from(p); break;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void ClassicTrainedModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump();
}

ClassicTrainedModel ClassicTrainedModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

ClassicTrainedModel fit(const ClassicModelSpec& spec, const Matrix& x, std::span<const int> y, int jobs) {
  const auto start = std::chrono::steady_clock::now();
  spec.validate();
  if (x.rows() != y.size()) throw ContractError("fit: X and y differ in length");
  if (x.rows() == 0 || x.cols() == 0) throw ContractError("fit: empty training set");
  for (int v : y) {
    if (v < 0 || v >= kNumClasses) throw ContractError("fit: label outside 0..3");
  }
  ClassicTrainedModel m;
  m.spec = spec;
  m.n_features = x.cols();
  switch (spec.kind) {
    case ClassicKind::kKnn:
      m.impl = std::make_shared<Knn>(x, std::vector<int>(y.begin(), y.end()), spec.k);
      break;
    case ClassicKind::kSvmLinear: m.impl = LinearSvm::fit(x, y, spec.c, spec.seed); break;
    case ClassicKind::kSvmRbf: m.impl = RbfSvm::fit(x, y, spec.c, spec.gamma); break;
    case ClassicKind::kDtree: {
      TreeParams p;
      p.max_depth = spec.max_depth;
      p.min_samples_leaf = spec.min_samples_leaf;
      m.impl = std::make_shared<TreeModel>(DecisionTree::fit(x, y, {}, p));
      break;
    }
    case ClassicKind::kRforest: {
      ForestParams p;
      p.n_trees = spec.n_trees;
      p.max_depth = spec.max_depth;
      p.min_samples_leaf = spec.min_samples_leaf;
      m.impl = std::make_shared<ForestModel>(RandomForest::fit(x, y, p, spec.seed, jobs));
      break;
    }
    case ClassicKind::kAdaboost: m.impl = AdaBoost::fit(x, y, spec.n_stumps); break;
    case ClassicKind::kGnb: m.impl = Gnb::fit(x, y); break;
    case ClassicKind::kQda: m.impl = Qda::fit(x, y, spec.shrinkage); break;
    case ClassicKind::kSlp: {
      auto cfg = spec.slp;
      cfg.seed = spec.seed;
      m.impl = Slp::fit(x, y, cfg);
      break;
    }
  }
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

}  // namespace qvp::classic
