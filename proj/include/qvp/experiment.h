#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvp/audio.h"

namespace qvp::experiment {

using Json = nlohmann::json;
using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [truth][predicted]

enum class AugmentMode { kNone, kWaveform, kSpectrogram, kBoth };

std::string augment_name(AugmentMode mode);
/// Throws ConfigError listing the valid names.
AugmentMode augment_from_name(const std::string& name);

/// Canonical family name: mlp, cnn, tcnn or a classic kind name ("rf" maps
/// to "rforest", '-' to '_'). Throws ConfigError for anything else.
std::string canonical_model(const std::string& name);
/// Names accepted on the command line.
const std::vector<std::string>& model_choices();
bool is_spectrogram_model(const std::string& model);

struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t participants = 8;
  std::size_t per_class = 25;
  double hihat_blend = 0.0;
};

/// Seed of synthetic participant `index`, shared by gen-synth and in-memory runs.
std::uint64_t synthetic_participant_seed(std::uint64_t seed, std::size_t index);
/// "participant_01", "participant_02", ...
std::string synthetic_participant_id(std::size_t index);

struct ParticipantSource {
  std::string id;
  std::filesystem::path dir;
  bool ambiguous = false;
};

/// One hyperparameter axis; candidates are the cartesian product of all axes,
/// first axis slowest, in declaration order.
struct GridAxis {
  std::string name;
  std::vector<Json> values;
};

struct ExperimentConfig {
  std::vector<ParticipantSource> participants;
  std::optional<SyntheticSpec> synthetic;
  std::string model = "cnn";
  AugmentMode augment = AugmentMode::kNone;
  std::vector<GridAxis> grid;  // empty: family default
  std::uint64_t seed = 0;
  std::size_t n_seeds = 30;
  int max_epochs = 200;
  double validation_split = 0.10;
  std::size_t ranking_trees = 100;
  int jobs = 1;
  bool allow_override = false;
  std::filesystem::path output_dir = "out";

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Declared grid, or the family default when none was declared.
  std::vector<GridAxis> effective_grid() const;

  Json to_json() const;
  /// Unknown keys are appended to `unknown` (as "key" or "section.key").
  /// A grid object keeps its key order only through load(); an array of
  /// {"name", "values"} axes keeps it everywhere.
  static ExperimentConfig from_json(const Json& j, std::vector<std::string>* unknown = nullptr);
  static ExperimentConfig load(const std::filesystem::path& path, std::vector<std::string>* unknown = nullptr);
};

/// Small desk-scale grid for a family.
std::vector<GridAxis> default_grid(const std::string& model);
/// Cartesian product as JSON objects {axis: value}.
std::vector<Json> expand_grid(const std::vector<GridAxis>& grid);

/// Scans a directory: itself when it holds kick.wav, otherwise every
/// subdirectory in name order.
std::vector<ParticipantSource> discover_participants(const std::filesystem::path& data_dir);

struct LoadedParticipant {
  std::string id;
  bool ambiguous = false;
  std::optional<ParticipantData> data;
  std::string error;
};

/// Reads every participant source (or generates the synthetic ones). Load
/// failures are kept as entries with an error message.
std::vector<LoadedParticipant> load_participants(const ExperimentConfig& cfg);

struct CandidateResult {
  Json hyperparameters;
  double validation_accuracy = -1.0;  // percent; negative when the candidate failed
  std::optional<double> test_accuracy;
  std::string error;
};

struct ParticipantResult {
  std::string id;
  bool ambiguous = false;
  std::string error;
  std::size_t winner = 0;
  Json hyperparameters;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
  Confusion confusion{};
  std::vector<std::size_t> selected_features;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  std::vector<CandidateResult> candidates;

  bool ok() const { return error.empty(); }
};

struct InterpretabilityReport {
  std::vector<std::size_t> feature_tally;  // one count per engineered feature
  Confusion confusion{};
  int confused_truth = -1;  // largest off-diagonal entry, -1 when there are no errors
  int confused_predicted = -1;

  Json to_json() const;
};

struct TimingRow {
  std::string id;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  double test_accuracy = 0.0;
};

struct TimingTable {
  std::vector<TimingRow> rows;
  double mean_train_seconds = 0.0;
  double mean_test_seconds = 0.0;
};

struct KdeCurve {
  double bandwidth = 0.0;
  std::vector<double> x, density;
};

struct StabilitySamples {
  std::vector<Json> labels;        // hyperparameters or seed per sample
  std::vector<double> samples;     // mean test accuracy over participants, percent
  std::vector<double> validation;  // mean validation accuracy, same order
  KdeCurve kde;
};

struct ExperimentReport {
  std::string model;
  std::string augment;
  std::vector<ParticipantResult> participants;
  double mean_accuracy = 0.0;
  InterpretabilityReport interpretability;
  std::optional<TimingTable> timing;
  std::optional<StabilitySamples> stability_hyper;
  std::optional<StabilitySamples> stability_seed;
  Json best_hyperparameters;

  Json to_json() const;
  /// report.json, accuracy.csv, timing.csv and feature_tally.csv when there are
  /// participant results; stability.json and stability_*.csv when there are samples.
  void write(const std::filesystem::path& dir) const;
};

/// Called once per participant after selection, before the test split is
/// touched. Tests use it to observe the pipeline order.
using SelectionHook = std::function<void(const std::string& participant, const Json& winner)>;

/// Percent accuracy computed from a confusion matrix.
double confusion_accuracy(const Confusion& c);
Confusion confusion_matrix(const std::vector<int>& predicted, const std::vector<int>& truth);

/// Exhaustive sweep per participant scored on the internal validation
/// split; the best candidate (earliest on ties) is evaluated once on test.
/// Throws DataError when every participant fails.
ExperimentReport run_grid_search(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data,
                                 const SelectionHook& hook = {});
ExperimentReport run_grid_search(const ExperimentConfig& cfg);

/// Retrains each participant's winner from raw clips, timing preprocessing
/// and training together, and test feature extraction with inference.
TimingTable measure_efficiency(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data,
                               const std::vector<ParticipantResult>& winners);

/// Test accuracy of every grid point, averaged over participants.
StabilitySamples run_stability_hyper(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data);
/// Sample with the best mean validation accuracy (earliest on ties).
std::size_t best_sample(const StabilitySamples& s);
/// Retrains one configuration under n_seeds model seeds.
StabilitySamples run_stability_seed(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data,
                                    const Json& best, std::size_t n_seeds);

/// Gaussian KDE with Silverman's bandwidth, evaluated at `points` evenly
/// spaced values on [lo, hi] and renormalized to unit trapezoid mass there.
KdeCurve gaussian_kde(const std::vector<double>& samples, std::size_t points = 200, double lo = 0.0,
                      double hi = 100.0);
double silverman_bandwidth(const std::vector<double>& samples);
double trapezoid(const std::vector<double>& x, const std::vector<double>& y);

InterpretabilityReport interpretability_report(const std::vector<std::vector<std::size_t>>& selections,
                                               const std::vector<Confusion>& confusions,
                                               std::size_t n_features);

/// Preprocessing plus a fitted model for one grid point, trained the way the
/// grid search trains participant 0's candidates.
struct TrainedPipeline {
  struct State;

  std::string model;
  Json hyperparameters;
  double validation_accuracy = 0.0;  // percent, on the internal validation split
  double seconds = 0.0;
  std::shared_ptr<const State> state;

  /// Class predictions for raw clips.
  std::vector<int> predict(const UtteranceDataset& clips) const;

  Json to_json() const;
  static TrainedPipeline from_json(const Json& j);
  void save(const std::filesystem::path& path) const;
  static TrainedPipeline load(const std::filesystem::path& path);
};

TrainedPipeline train_pipeline(const ExperimentConfig& cfg, const Json& candidate, const UtteranceDataset& train);

/// Wall-clock seconds of fn() on a monotonic clock, rounded to 1 ms.
double timed_seconds(const std::function<void()>& fn);

}  // namespace qvp::experiment
