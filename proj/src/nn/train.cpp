#include "qvp/nn/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "qvp/audio.h"
#include "qvp/error.h"
#include "qvp/nn/optim.h"

namespace qvp::nn {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::string loss_name(LossKind k) { return k == LossKind::kTriplet ? "triplet" : "cross_entropy"; }
std::string strategy_name(TripletStrategy s) {
  return s == TripletStrategy::kRandomNegative ? "random_negative" : "hardest_negative";
}

/// Eval-mode forward in chunks so large sets do not hold every activation at once.
Tensor forward_eval(Network& net, const Tensor& x) {
  if (x.rank() == 0 || x.dim(0) == 0) {
    Shape s = net.output_shape();
    s.insert(s.begin(), 0);
    return Tensor(s);
  }
  const std::size_t n = x.dim(0);
  std::vector<double> values;
  Shape out_shape;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::vector<std::size_t> rows(std::min(kEvalChunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    const Tensor y = net.forward(x.gather(rows), Mode::kEval);
    out_shape = y.shape();
    values.insert(values.end(), y.values().begin(), y.values().end());
  }
  out_shape[0] = n;
  return Tensor(out_shape, std::move(values));
}

double validation_loss(Network& net, const Tensor& x, std::span<const int> y, const TrainConfig& cfg) {
  if (y.empty()) return 0.0;
  const Tensor out = forward_eval(net, x);
  if (cfg.loss == LossKind::kCrossEntropy) return cross_entropy_loss(out, y).loss;
  Rng unused(0);
  const auto triplets = mine_triplets(out, y, TripletStrategy::kHardestNegative, cfg.margin, unused);
  return batch_triplet_loss(out, triplets, cfg.margin).loss;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.dim(0));
  const std::size_t k = logits.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = logits.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace

TrainConfig TrainConfig::for_kind(NetKind kind) {
  TrainConfig c;
  switch (kind) {
    case NetKind::kMlp:
    case NetKind::kSlp:
      c.lr_factor = 2.0;
      c.early_stop_patience = 3;
      break;
    case NetKind::kCnn:
      c.lr_factor = 3.0;
      c.early_stop_patience = 8;
      break;
    case NetKind::kTcnn:
      c.lr_factor = 2.0;
      c.early_stop_patience = 3;
      c.loss = LossKind::kTriplet;
      break;
  }
  return c;
}

std::vector<double> TrainConfig::learning_rate_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 10; ++k) grid.push_back(std::pow(10.0, -1.0 - 0.5 * k));
  return grid;
}

void TrainConfig::validate(std::size_t train_size) const {
  if (!(validation_split > 0.0 && validation_split < 1.0)) throw ConfigError("train: validation_split must be in (0, 1)");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!allow_override) {
    const double e = std::log10(learning_rate);
    const double snapped = std::round(2.0 * e) / 2.0;
    if (std::abs(e - snapped) > 1e-9 || snapped > -1.0 || snapped < -6.0) {
      throw ConfigError("train: learning_rate " + std::to_string(learning_rate) +
                        " is not on the grid 10^-1 ... 10^-6 in half-decade steps");
    }
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (batch_size > train_size / 10) {
    throw ConfigError("train: batch_size " + std::to_string(batch_size) + " exceeds floor(train size / 10) = " +
                      std::to_string(train_size / 10));
  }
  if (!(min_lr_fraction > 0.0 && min_lr_fraction <= 1.0)) throw ConfigError("train: min_lr_fraction must be in (0, 1]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"validation_split", validation_split},
          {"max_epochs", max_epochs},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"lr_factor", lr_factor},
          {"scheduler_patience", scheduler_patience},
          {"min_lr_fraction", min_lr_fraction},
          {"early_stop_patience", early_stop_patience},
          {"loss", loss_name(loss)},
          {"triplet_strategy", strategy_name(triplet_strategy)},
          {"margin", margin},
          {"seed", seed},
          {"allow_override", allow_override}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.validation_split = j.value("validation_split", c.validation_split);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_factor = j.value("lr_factor", c.lr_factor);
  c.scheduler_patience = j.value("scheduler_patience", c.scheduler_patience);
  c.min_lr_fraction = j.value("min_lr_fraction", c.min_lr_fraction);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  const auto loss = j.value("loss", loss_name(c.loss));
  if (loss != "triplet" && loss != "cross_entropy") throw ConfigError("train: unknown loss '" + loss + "'");
  c.loss = loss == "triplet" ? LossKind::kTriplet : LossKind::kCrossEntropy;
  const auto strategy = j.value("triplet_strategy", strategy_name(c.triplet_strategy));
  if (strategy != "random_negative" && strategy != "hardest_negative") {
    throw ConfigError("train: unknown triplet_strategy '" + strategy + "'");
  }
  c.triplet_strategy =
      strategy == "random_negative" ? TripletStrategy::kRandomNegative : TripletStrategy::kHardestNegative;
  c.margin = j.value("margin", c.margin);
  c.seed = j.value("seed", c.seed);
  c.allow_override = j.value("allow_override", c.allow_override);
  return c;
}

TensorDataset TensorDataset::subset(std::span<const std::size_t> rows) const {
  TensorDataset out;
  out.inputs = inputs.gather(rows);
  for (std::size_t r : rows) out.labels.push_back(labels[r]);
  return out;
}

Normalizer Normalizer::fit_per_feature(const Tensor& inputs) {
  const std::size_t n = inputs.dim(0), d = inputs.row_size();
  if (n == 0) throw ContractError("Normalizer: empty input");
  Normalizer z;
  z.mean.assign(d, 0.0);
  z.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z.mean[j] += inputs[i * d + j];
  }
  for (double& m : z.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z.stddev[j] += std::pow(inputs[i * d + j] - z.mean[j], 2);
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double s = std::sqrt(z.stddev[j] / static_cast<double>(n));
    z.stddev[j] = s > 1e-12 * std::max(1.0, std::abs(z.mean[j])) ? s : 1.0;
  }
  return z;
}

Normalizer Normalizer::fit_scalar(const Tensor& inputs) {
  if (inputs.size() == 0) throw ContractError("Normalizer: empty input");
  const double n = static_cast<double>(inputs.size());
  const double mean = std::accumulate(inputs.values().begin(), inputs.values().end(), 0.0) / n;
  double ss = 0.0;
  for (double v : inputs.values()) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / n);
  Normalizer z;
  z.mean = {mean};
  z.stddev = {s > 1e-12 * std::max(1.0, std::abs(mean)) ? s : 1.0};
  return z;
}

Tensor Normalizer::apply(const Tensor& inputs) const {
  Tensor out = inputs;
  if (mean.size() == 1) {
    for (double& v : out.values()) v = (v - mean[0]) / stddev[0];
    return out;
  }
  const std::size_t d = mean.size();
  if (inputs.row_size() != d && inputs.size() != 0) {
    throw ContractError("Normalizer: expected " + std::to_string(d) + " features per row, got " +
                        std::to_string(inputs.row_size()));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % d]) / stddev[i % d];
  return out;
}

Tensor TrainedNetwork::outputs(const Tensor& raw_inputs) const {
  Network net = network;
  return forward_eval(net, normalizer.apply(raw_inputs));
}

std::vector<int> TrainedNetwork::predict(const Tensor& raw_inputs) const {
  if (config.kind == NetKind::kTcnn) throw ContractError("predict: a tcnn outputs embeddings, not class logits");
  return argmax_rows(outputs(raw_inputs));
}

nlohmann::json TrainedNetwork::to_json() const {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : history) hist.push_back({h.epoch, h.train_loss, h.val_loss, h.lr});
  return {{"format", "qvp-checkpoint"},
          {"version", 1},
          {"kind", kind_name(config.kind)},
          {"network_config", config.to_json()},
          {"train_config", train_config.to_json()},
          {"seed", train_config.seed},
          {"normalizer", {{"mean", normalizer.mean}, {"stddev", normalizer.stddev}}},
          {"network", network.to_json()},
          {"history", hist},
          {"best_epoch", best_epoch},
          {"seconds", seconds},
          {"skipped_steps", skipped_steps}};
}

TrainedNetwork TrainedNetwork::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "qvp-checkpoint") throw DataError("not a qvp checkpoint");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    TrainedNetwork t;
    t.config = NetworkConfig::from_json(j.at("network_config"));
    t.train_config = TrainConfig::from_json(j.at("train_config"));
    t.normalizer.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
    t.normalizer.stddev = j.at("normalizer").at("stddev").get<std::vector<double>>();
    t.network = Network::from_json(j.at("network"));
    for (const auto& h : j.at("history")) {
      t.history.push_back({h.at(0).get<int>(), h.at(1).get<double>(), h.at(2).get<double>(), h.at(3).get<double>()});
    }
    t.best_epoch = j.value("best_epoch", 0);
    t.seconds = j.value("seconds", 0.0);
    t.skipped_steps = j.value("skipped_steps", std::size_t{0});
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void TrainedNetwork::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump();
}

TrainedNetwork TrainedNetwork::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void TrainedNetwork::write_history_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,train_loss,val_loss,lr\n";
  for (const auto& h : history) out << h.epoch << ',' << h.train_loss << ',' << h.val_loss << ',' << h.lr << '\n';
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                             double fraction, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  std::vector<std::size_t> train, val;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) rows.push_back(i);
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    if (n_val >= rows.size()) n_val = rows.size() > 0 ? rows.size() - 1 : 0;
    val.insert(val.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

TrainedNetwork train_network(const NetworkConfig& config, const TensorDataset& train, const TrainConfig& cfg,
                             const TensorDataset* validation) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  cfg.validate(train.size());
  Shape per(train.inputs.shape().begin() + 1, train.inputs.shape().end());
  if (train.inputs.rank() == 0 || train.inputs.dim(0) != train.size() || per != config.input_shape()) {
    throw ContractError("train_network: inputs " + shape_string(train.inputs.shape()) + " do not match network input " +
                        shape_string(config.input_shape()));
  }
  for (int y : train.labels) {
    if (y < 0 || y >= kNumClasses) throw ContractError("train_network: label outside 0..3");
  }
  if ((config.kind == NetKind::kTcnn) != (cfg.loss == LossKind::kTriplet)) {
    throw ConfigError("train_network: tcnn trains with the triplet loss, every other kind with cross-entropy");
  }

  TensorDataset fit, val;
  if (validation != nullptr) {
    fit = train;
    val = *validation;
  } else {
    const auto [tr_rows, val_rows] = stratified_split(train.labels, cfg.validation_split, derive_seed(cfg.seed, 0));
    if (val_rows.empty()) throw DataError("train_network: validation split is empty");
    fit = train.subset(tr_rows);
    val = train.subset(val_rows);
  }

  TrainedNetwork result;
  result.config = config;
  result.train_config = cfg;
  const bool per_feature = config.kind == NetKind::kMlp || config.kind == NetKind::kSlp;
  result.normalizer = per_feature ? Normalizer::fit_per_feature(fit.inputs) : Normalizer::fit_scalar(fit.inputs);
  const Tensor x_fit = result.normalizer.apply(fit.inputs);
  const Tensor x_val = result.normalizer.apply(val.inputs);

  Network net = build_network(config, derive_seed(cfg.seed, 1));
  Rng rng = make_rng(cfg.seed, 2);
  Adam adam;
  PlateauScheduler scheduler(cfg.learning_rate, cfg.lr_factor, cfg.scheduler_patience,
                             cfg.learning_rate * cfg.min_lr_fraction);
  EarlyStopping stopper(cfg.early_stop_patience);
  Network best = net;
  const auto params = net.params();

  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = scheduler.lr();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t startb = 0; startb < order.size(); startb += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + startb, std::min(cfg.batch_size, order.size() - startb));
      const Tensor xb = x_fit.gather(rows);
      std::vector<int> yb;
      for (std::size_t r : rows) yb.push_back(fit.labels[r]);
      net.zero_grad();
      const Tensor out = net.forward(xb, Mode::kTrain);
      LossResult lr_result;
      if (cfg.loss == LossKind::kCrossEntropy) {
        lr_result = cross_entropy_loss(out, yb);
      } else {
        const auto triplets = mine_triplets(out, yb, cfg.triplet_strategy, cfg.margin, rng);
        if (triplets.empty()) {
          ++result.skipped_steps;
          continue;
        }
        lr_result = batch_triplet_loss(out, triplets, cfg.margin);
      }
      net.backward(lr_result.grad);
      adam.step(params, lr);
      loss_sum += lr_result.loss;
      ++loss_count;
    }
    double val_loss = validation_loss(net, x_val, val.labels, cfg);
    if (!std::isfinite(val_loss)) val_loss = std::numeric_limits<double>::infinity();
    result.history.push_back({epoch, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, val_loss, lr});
    if (stopper.update(epoch, val_loss)) best = net;
    scheduler.step(val_loss);
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.network = std::move(best);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

EmbedResult embed_and_classify(const TrainedNetwork& tcnn, const TensorDataset& train, const TensorDataset& test,
                               const TrainConfig& slp_config) {
  if (tcnn.config.kind != NetKind::kTcnn) throw ContractError("embed_and_classify: expects a tcnn");
  const std::size_t e = tcnn.config.embedding_dim;
  if (e != 16 && e != 32 && !(tcnn.config.allow_override || slp_config.allow_override)) {
    throw ConfigError("embed_and_classify: embedding_dim must be 16 or 32");
  }
  TensorDataset train_emb{tcnn.outputs(train.inputs), train.labels};
  const Tensor test_emb = tcnn.outputs(test.inputs);
  EmbedResult r;
  TrainConfig cfg = slp_config;
  cfg.loss = LossKind::kCrossEntropy;
  r.slp = train_network(NetworkConfig::slp(e), train_emb, cfg);
  r.predictions = r.slp.predict(test_emb);
  return r;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ContractError("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace qvp::nn
