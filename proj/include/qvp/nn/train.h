#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qvp/nn/loss.h"
#include "qvp/nn/network.h"

namespace qvp::nn {

enum class LossKind { kCrossEntropy, kTriplet };

struct TrainConfig {
  double validation_split = 0.10;
  int max_epochs = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  double lr_factor = 2.0;          // divisor applied on plateau
  int scheduler_patience = 4;
  double min_lr_fraction = 0.1;    // learning rate never drops below this fraction of its start
  int early_stop_patience = 3;
  LossKind loss = LossKind::kCrossEntropy;
  TripletStrategy triplet_strategy = TripletStrategy::kHardestNegative;
  double margin = 0.0;
  std::uint64_t seed = 0;
  bool allow_override = false;

  /// Family defaults: mlp/slp divide by 2 and stop after 3; cnn divides by 3
  /// and stops after 8; tcnn divides by 2, stops after 3 and uses the triplet loss.
  static TrainConfig for_kind(NetKind kind);
  /// 10^-1, 10^-1.5, ..., 10^-6.
  static std::vector<double> learning_rate_grid();

  /// Throws ConfigError on an off-grid learning rate (unless overridden) or a
  /// batch larger than floor(train_size / 10).
  void validate(std::size_t train_size) const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Inputs are [N, ...] with the per-sample shape of the target network.
struct TensorDataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
  TensorDataset subset(std::span<const std::size_t> rows) const;
};

/// Per-feature standardization (length = row size) or a single scalar pair.
struct Normalizer {
  std::vector<double> mean{0.0};
  std::vector<double> stddev{1.0};

  static Normalizer fit_per_feature(const Tensor& inputs);
  static Normalizer fit_scalar(const Tensor& inputs);
  Tensor apply(const Tensor& inputs) const;
};

struct EpochRecord {
  int epoch;
  double train_loss, val_loss, lr;
};

struct TrainedNetwork {
  NetworkConfig config;
  TrainConfig train_config;
  Network network;
  Normalizer normalizer;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double seconds = 0.0;
  std::size_t skipped_steps = 0;  // triplet batches without a usable triplet

  /// Eval-mode outputs (logits or embeddings) for raw, unnormalized inputs.
  Tensor outputs(const Tensor& raw_inputs) const;
  /// Argmax of the logits.
  std::vector<int> predict(const Tensor& raw_inputs) const;

  nlohmann::json to_json() const;
  static TrainedNetwork from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TrainedNetwork load(const std::filesystem::path& path);
  void write_history_csv(const std::filesystem::path& path) const;
};

/// Seeded per-class split; returns (train rows, validation rows). Each class
/// gives round(fraction * count) rows to validation, keeping at least one for training.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                             double fraction, std::uint64_t seed);

/// Trains with Adam, the plateau scheduler and early stopping, and returns
/// the best-validation snapshot. Without an explicit `validation` set the
/// training data is split by stratified_split. Inputs are standardized
/// per feature for mlp/slp and by one scalar pair for cnn/tcnn, fitted on
/// the training rows.
TrainedNetwork train_network(const NetworkConfig& config, const TensorDataset& train, const TrainConfig& cfg,
                             const TensorDataset* validation = nullptr);

struct EmbedResult {
  std::vector<int> predictions;
  TrainedNetwork slp;
};

/// Embeds both sets with the trained TCNN (eval mode), fits a single-layer
/// perceptron on the training embeddings and classifies the test embeddings.
EmbedResult embed_and_classify(const TrainedNetwork& tcnn, const TensorDataset& train, const TensorDataset& test,
                               const TrainConfig& slp_config);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

}  // namespace qvp::nn
