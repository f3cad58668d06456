#include "qvp/experiment.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "qvp/augment.h"
#include "qvp/classic/models.h"
#include "qvp/dsp.h"
#include "qvp/error.h"
#include "qvp/featsel.h"
#include "qvp/nn/train.h"
#include "qvp/parallel.h"
#include "qvp/random.h"

namespace qvp::experiment {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Substream tags under the experiment seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kModelStream = 3;
constexpr std::uint64_t kRankStream = 4;
constexpr std::uint64_t kSeedStudyStream = 5;

constexpr double kKdeMinBandwidth = 1.0;  // percentage points

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return derive_seed(derive_seed(seed, stream), index);
}

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double round_ms(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_ms(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

bool is_classic(const std::string& model) { return model != "mlp" && model != "cnn" && model != "tcnn"; }

std::vector<std::string> allowed_axes(const std::string& model) {
  if (model == "cnn") return {"n_bands", "conv_layers", "filters", "pools", "learning_rate", "batch_size"};
  if (model == "tcnn") {
    return {"n_bands",    "conv_layers", "filters",          "pools",           "embedding_dim",
            "learning_rate", "batch_size", "margin", "triplet_strategy", "slp_learning_rate"};
  }
  if (model == "mlp") return {"select_k", "hidden_variant", "learning_rate", "batch_size"};
  switch (classic::classic_kind_from_name(model)) {
    case classic::ClassicKind::kKnn: return {"select_k", "k"};
    case classic::ClassicKind::kSvmLinear: return {"select_k", "C"};
    case classic::ClassicKind::kSvmRbf: return {"select_k", "C", "gamma"};
    case classic::ClassicKind::kDtree: return {"select_k", "max_depth", "min_samples_leaf"};
    case classic::ClassicKind::kRforest: return {"select_k", "n_trees"};
    case classic::ClassicKind::kAdaboost: return {"select_k", "n_stumps"};
    case classic::ClassicKind::kGnb: return {"select_k"};
    case classic::ClassicKind::kQda: return {"select_k", "shrinkage"};
    case classic::ClassicKind::kSlp: return {"select_k", "learning_rate", "batch_size"};
  }
  return {};
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? sep : "") + items[i];
  return s;
}

std::string describe(const Json& hp) {
  std::vector<std::string> parts;
  for (const auto& [key, value] : hp.items()) {
    parts.push_back(key + "=" + (value.is_string() ? value.get<std::string>() : value.dump()));
  }
  return join(parts, ";");
}

std::size_t get_size(const Json& c, const char* key, std::size_t fallback) {
  if (!c.contains(key)) return fallback;
  const Json& v = c.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(std::string("grid: ") + key + " must be an integer");
  const auto n = v.get<long long>();
  if (n < 0) throw ConfigError(std::string("grid: ") + key + " must be non-negative");
  return static_cast<std::size_t>(n);
}

double get_double(const Json& c, const char* key, double fallback) {
  if (!c.contains(key)) return fallback;
  if (!c.at(key).is_number()) throw ConfigError(std::string("grid: ") + key + " must be a number");
  return c.at(key).get<double>();
}

std::size_t candidate_bands(const Json& c) { return get_size(c, "n_bands", 8); }

nn::NetworkConfig network_config(const ExperimentConfig& cfg, const Json& c, std::size_t n_inputs) {
  nn::NetworkConfig net;
  if (cfg.model == "mlp") {
    net = nn::NetworkConfig::mlp(n_inputs, get_size(c, "hidden_variant", 0));
  } else if (cfg.model == "cnn") {
    net = nn::NetworkConfig::cnn(candidate_bands(c), get_size(c, "conv_layers", 2), get_size(c, "filters", 8),
                                 get_size(c, "pools", 1));
  } else {
    net = nn::NetworkConfig::tcnn(candidate_bands(c), get_size(c, "conv_layers", 2), get_size(c, "filters", 8),
                                  get_size(c, "pools", 1), get_size(c, "embedding_dim", 16));
  }
  net.allow_override = cfg.allow_override;
  net.validate();
  return net;
}

nn::TrainConfig train_config(const ExperimentConfig& cfg, nn::NetKind kind, const Json& c, std::uint64_t seed) {
  nn::TrainConfig t = nn::TrainConfig::for_kind(kind);
  t.validation_split = cfg.validation_split;
  t.max_epochs = cfg.max_epochs;
  t.learning_rate = get_double(c, "learning_rate", t.learning_rate);
  t.batch_size = get_size(c, "batch_size", t.batch_size);
  t.seed = seed;
  t.allow_override = cfg.allow_override;
  if (kind == nn::NetKind::kTcnn) {
    t.margin = get_double(c, "margin", t.margin);
    if (c.contains("triplet_strategy")) {
      Json j = t.to_json();
      j["triplet_strategy"] = c.at("triplet_strategy");
      t = nn::TrainConfig::from_json(j);
    }
  }
  return t;
}

classic::ClassicModelSpec classic_spec(const ExperimentConfig& cfg, const Json& c, std::uint64_t seed) {
  Json j = {{"kind", cfg.model}};
  for (const char* key : {"k", "C", "gamma", "max_depth", "min_samples_leaf", "n_trees", "n_stumps", "shrinkage"}) {
    if (c.contains(key)) j[key] = c.at(key);
  }
  if (c.contains("max_depth") && c.at("max_depth").is_null()) j["max_depth"] = "none";
  auto spec = classic::ClassicModelSpec::from_json(j);
  spec.seed = seed;
  spec.allow_override = cfg.allow_override;
  spec.slp.learning_rate = get_double(c, "learning_rate", spec.slp.learning_rate);
  spec.slp.batch_size = get_size(c, "batch_size", spec.slp.batch_size);
  spec.slp.max_epochs = cfg.max_epochs;
  spec.slp.validation_split = cfg.validation_split;
  spec.slp.seed = seed;
  spec.slp.allow_override = cfg.allow_override;
  spec.validate();
  return spec;
}

// Early, data-independent check of one grid point.
void check_candidate(const ExperimentConfig& cfg, const Json& c) {
  if (is_spectrogram_model(cfg.model)) {
    if (!is_valid_band_count(candidate_bands(c))) throw ConfigError("grid: n_bands must be one of 8, 12, 16");
    network_config(cfg, c, 0);
    const auto kind = cfg.model == "cnn" ? nn::NetKind::kCnn : nn::NetKind::kTcnn;
    train_config(cfg, kind, c, 0);
    if (kind == nn::NetKind::kTcnn) {
      const double lr = get_double(c, "slp_learning_rate", 1e-2);
      const auto grid = nn::TrainConfig::learning_rate_grid();
      if (!cfg.allow_override &&
          std::none_of(grid.begin(), grid.end(), [&](double g) { return std::abs(g - lr) <= 1e-12 * g; })) {
        throw ConfigError("grid: slp_learning_rate must be on the learning-rate grid");
      }
    }
    return;
  }
  const std::size_t k = get_size(c, "select_k", kNumFeatures);
  if (c.contains("select_k") && !is_valid_select_k(k) && !(cfg.allow_override && k >= 1 && k <= kNumFeatures)) {
    throw ConfigError("grid: select_k must be one of 1, 2, 4, 8, 16, 32");
  }
  if (cfg.model == "mlp") {
    network_config(cfg, c, k);
    train_config(cfg, nn::NetKind::kMlp, c, 0);
  } else {
    classic_spec(cfg, c, 0);
  }
}

UtteranceDataset subset(const UtteranceDataset& ds, const std::vector<std::size_t>& rows) {
  UtteranceDataset out;
  out.participant_id = ds.participant_id;
  out.split = ds.split;
  for (std::size_t r : rows) out.push_back(ds.clips[r], ds.labels[r], ds.provenance[r]);
  return out;
}

nn::TensorDataset spectrogram_tensors(const SpectrogramDataset& ds, std::size_t n) {
  nn::TensorDataset out{nn::Tensor({ds.size(), 1, n, n}), ds.labels};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::copy(ds.specs[i].values.begin(), ds.specs[i].values.end(), out.inputs.data() + i * n * n);
  }
  return out;
}

nn::TensorDataset matrix_tensors(const Matrix& x, std::vector<int> labels) {
  return {nn::Tensor({x.rows(), x.cols()}, x.data()), std::move(labels)};
}

// Training-side data for one participant, shared by every candidate.
struct Prepared {
  std::vector<int> fit_labels, val_labels;
  std::map<std::size_t, nn::TensorDataset> fit_specs, val_specs;
  std::map<std::size_t, double> band_seconds;
  Matrix fit_x, val_x;  // standardized, all features
  Standardizer standardizer;
  std::optional<FeatureRanking> ranking;
  double common_seconds = 0.0;
};

Prepared prepare(const ExperimentConfig& cfg, const UtteranceDataset& train, std::size_t index,
                 const std::set<std::size_t>& bands, bool need_ranking) {
  Prepared p;
  auto start = Clock::now();
  const auto [fit_rows, val_rows] = nn::stratified_split(train.labels, cfg.validation_split,
                                                         stream_seed(cfg.seed, kSplitStream, index));
  UtteranceDataset fit = subset(train, fit_rows);
  const UtteranceDataset val = subset(train, val_rows);
  const std::uint64_t aug_seed = stream_seed(cfg.seed, kAugmentStream, index);
  if (cfg.augment == AugmentMode::kWaveform || cfg.augment == AugmentMode::kBoth) {
    fit = expand_dataset(fit, AugmentationPlan::waveform_default(aug_seed));
  }
  p.val_labels = val.labels;

  if (is_spectrogram_model(cfg.model)) {
    p.common_seconds = elapsed(start);
    for (std::size_t n : bands) {
      start = Clock::now();
      SpectrogramDataset fs = spectrogram_dataset(fit, n);
      if (cfg.augment == AugmentMode::kSpectrogram || cfg.augment == AugmentMode::kBoth) {
        fs = expand_dataset(fs, AugmentationPlan::spectrogram_default(derive_seed(aug_seed, n)));
      }
      p.fit_labels = fs.labels;
      p.fit_specs.emplace(n, spectrogram_tensors(fs, n));
      p.val_specs.emplace(n, spectrogram_tensors(spectrogram_dataset(val, n), n));
      p.band_seconds[n] = elapsed(start);
    }
    return p;
  }

  p.fit_labels = fit.labels;
  const Matrix fit_raw = feature_matrix(fit);
  p.standardizer = Standardizer::fit(fit_raw);
  p.fit_x = p.standardizer.apply(fit_raw);
  p.val_x = p.standardizer.apply(feature_matrix(val));
  if (need_ranking) {
    p.ranking = forest_importances(p.fit_x, p.fit_labels, cfg.ranking_trees, stream_seed(cfg.seed, kRankStream, index));
  }
  p.common_seconds = elapsed(start);
  return p;
}

struct Model {
  std::optional<nn::TrainedNetwork> net, slp;
  std::optional<classic::ClassicTrainedModel> classic;
  std::vector<std::size_t> columns;
  std::size_t n_bands = 0;
  std::vector<int> validation_predictions;
};

std::vector<std::size_t> candidate_columns(const ExperimentConfig& cfg, const Prepared& p, const Json& c) {
  if (!c.contains("select_k")) {
    std::vector<std::size_t> all(kNumFeatures);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  return select_top_k(*p.ranking, get_size(c, "select_k", 0), cfg.allow_override);
}

Model fit_candidate(const ExperimentConfig& cfg, const Prepared& p, const Json& c, std::uint64_t seed) {
  Model m;
  if (is_spectrogram_model(cfg.model)) {
    m.n_bands = candidate_bands(c);
    const auto& fit = p.fit_specs.at(m.n_bands);
    const auto& val = p.val_specs.at(m.n_bands);
    const auto net = network_config(cfg, c, 0);
    if (cfg.model == "cnn") {
      m.net = nn::train_network(net, fit, train_config(cfg, nn::NetKind::kCnn, c, seed), &val);
      m.validation_predictions = m.net->predict(val.inputs);
    } else {
      m.net = nn::train_network(net, fit, train_config(cfg, nn::NetKind::kTcnn, c, seed), &val);
      nn::TrainConfig slp = train_config(cfg, nn::NetKind::kSlp, Json::object(), derive_seed(seed, 1));
      slp.learning_rate = get_double(c, "slp_learning_rate", 1e-2);
      auto r = nn::embed_and_classify(*m.net, fit, val, slp);
      m.slp = std::move(r.slp);
      m.validation_predictions = std::move(r.predictions);
    }
    return m;
  }
  m.columns = candidate_columns(cfg, p, c);
  const Matrix fit_x = p.fit_x.select_cols(m.columns);
  const Matrix val_x = p.val_x.select_cols(m.columns);
  if (cfg.model == "mlp") {
    const auto val = matrix_tensors(val_x, p.val_labels);
    m.net = nn::train_network(network_config(cfg, c, m.columns.size()), matrix_tensors(fit_x, p.fit_labels),
                              train_config(cfg, nn::NetKind::kMlp, c, seed), &val);
    m.validation_predictions = m.net->predict(val.inputs);
  } else {
    m.classic = classic::fit(classic_spec(cfg, c, seed), fit_x, p.fit_labels);
    m.validation_predictions = m.classic->predict(val_x);
  }
  return m;
}

std::vector<int> predict_clips(const std::string& family, const Standardizer& z, const Model& m,
                               const UtteranceDataset& test) {
  if (is_spectrogram_model(family)) {
    const auto x = spectrogram_tensors(spectrogram_dataset(test, m.n_bands), m.n_bands);
    if (m.slp) return m.slp->predict(m.net->outputs(x.inputs));
    return m.net->predict(x.inputs);
  }
  const Matrix x = z.apply(feature_matrix(test)).select_cols(m.columns);
  if (m.net) return m.net->predict(matrix_tensors(x, test.labels).inputs);
  return m.classic->predict(x);
}

std::vector<int> predict_test(const ExperimentConfig& cfg, const Prepared& p, const Model& m,
                              const UtteranceDataset& test) {
  return predict_clips(cfg.model, p.standardizer, m, test);
}

double percent(const std::vector<int>& predicted, const std::vector<int>& truth) {
  return confusion_accuracy(confusion_matrix(predicted, truth));
}

struct Sweep {
  std::vector<Json> candidates;
  std::set<std::size_t> bands;
  bool need_ranking = false;
};

Sweep make_sweep(const ExperimentConfig& cfg, std::vector<Json> candidates) {
  Sweep s;
  s.candidates = std::move(candidates);
  for (const Json& c : s.candidates) {
    if (is_spectrogram_model(cfg.model)) s.bands.insert(candidate_bands(c));
    if (c.contains("select_k")) s.need_ranking = true;
  }
  return s;
}

// Selection on validation, then one test evaluation. With `test_all` every
// candidate is also scored on test (stability studies only).
ParticipantResult sweep_participant(const ExperimentConfig& cfg, const LoadedParticipant& lp, std::size_t index,
                                    const Sweep& sweep, std::uint64_t model_seed, bool test_all,
                                    const SelectionHook& hook) {
  ParticipantResult r;
  r.id = lp.id;
  r.ambiguous = lp.ambiguous;
  if (!lp.data) {
    r.error = lp.error.empty() ? "no data" : lp.error;
    return r;
  }
  try {
    const Prepared p = prepare(cfg, lp.data->train, index, sweep.bands, sweep.need_ranking);
    std::optional<Model> best;
    double best_fit_seconds = 0.0;
    for (std::size_t i = 0; i < sweep.candidates.size(); ++i) {
      CandidateResult cr;
      cr.hyperparameters = sweep.candidates[i];
      try {
        const auto start = Clock::now();
        Model m = fit_candidate(cfg, p, sweep.candidates[i], model_seed);
        const double seconds = elapsed(start);
        cr.validation_accuracy = percent(m.validation_predictions, p.val_labels);
        if (test_all) cr.test_accuracy = percent(predict_test(cfg, p, m, lp.data->test), lp.data->test.labels);
        if (!best || cr.validation_accuracy > r.validation_accuracy) {
          r.winner = i;
          r.validation_accuracy = cr.validation_accuracy;
          best = std::move(m);
          best_fit_seconds = seconds;
        }
      } catch (const Error& e) {
        cr.error = e.what();
      }
      r.candidates.push_back(std::move(cr));
    }
    if (!best) throw DataError("every candidate failed; first error: " + r.candidates.front().error);
    r.hyperparameters = sweep.candidates[r.winner];
    r.selected_features = best->columns;
    if (!is_classic(cfg.model) && cfg.model != "mlp") r.selected_features.clear();
    if (hook) hook(r.id, r.hyperparameters);

    const auto start = Clock::now();
    const std::vector<int> predicted = predict_test(cfg, p, *best, lp.data->test);
    r.test_seconds = round_ms(elapsed(start));
    r.train_seconds = round_ms(p.common_seconds + (best->n_bands ? p.band_seconds.at(best->n_bands) : 0.0) +
                               best_fit_seconds);
    r.confusion = confusion_matrix(predicted, lp.data->test.labels);
    r.test_accuracy = confusion_accuracy(r.confusion);
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

std::vector<ParticipantResult> sweep_all(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data,
                                         const Sweep& sweep, std::uint64_t seed_stream, bool test_all,
                                         const SelectionHook& hook) {
  std::vector<ParticipantResult> results(data.size());
  parallel_for(data.size(), cfg.jobs, [&](std::size_t i) {
    results[i] = sweep_participant(cfg, data[i], i, sweep, derive_seed(seed_stream, i), test_all, hook);
  });
  return results;
}

Confusion add(Confusion a, const Confusion& b) {
  for (int i = 0; i < kNumClasses; ++i) {
    for (int j = 0; j < kNumClasses; ++j) a[i][j] += b[i][j];
  }
  return a;
}

Json confusion_json(const Confusion& c) {
  Json j = Json::array();
  for (const auto& row : c) j.push_back(row);
  return j;
}

StabilitySamples summarize(std::vector<Json> labels, const std::vector<ParticipantResult>& results,
                           std::size_t n_samples) {
  StabilitySamples s;
  s.labels = std::move(labels);
  for (std::size_t g = 0; g < n_samples; ++g) {
    double test = 0.0, val = 0.0;
    std::size_t n = 0;
    for (const auto& r : results) {
      if (!r.ok() || !r.candidates[g].test_accuracy) continue;
      test += *r.candidates[g].test_accuracy;
      val += r.candidates[g].validation_accuracy;
      ++n;
    }
    if (n == 0) throw DataError("stability: configuration " + describe(s.labels[g]) + " failed for every participant");
    s.samples.push_back(test / static_cast<double>(n));
    s.validation.push_back(val / static_cast<double>(n));
  }
  s.kde = gaussian_kde(s.samples);
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string stability_csv(const StabilitySamples& s, const char* label_header) {
  std::string out = std::string("index,") + label_header + ",validation_accuracy,test_accuracy\n";
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    const std::string label = s.labels[i].is_object() ? describe(s.labels[i]) : s.labels[i].dump();
    out += std::to_string(i) + "," + label + "," + fmt(s.validation[i]) + "," + fmt(s.samples[i]) + "\n";
  }
  return out;
}

std::string kde_csv(const KdeCurve& k) {
  std::string out = "accuracy,density\n";
  for (std::size_t i = 0; i < k.x.size(); ++i) out += fmt(k.x[i]) + "," + fmt(k.density[i]) + "\n";
  return out;
}

Json stability_json(const StabilitySamples& s) {
  return {{"labels", s.labels},
          {"samples", s.samples},
          {"validation", s.validation},
          {"kde_bandwidth", s.kde.bandwidth}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

std::string augment_name(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kNone: return "none";
    case AugmentMode::kWaveform: return "waveform";
    case AugmentMode::kSpectrogram: return "spectrogram";
    case AugmentMode::kBoth: return "both";
  }
  return "none";
}

AugmentMode augment_from_name(const std::string& name) {
  for (auto m : {AugmentMode::kNone, AugmentMode::kWaveform, AugmentMode::kSpectrogram, AugmentMode::kBoth}) {
    if (augment_name(m) == name) return m;
  }
  throw ConfigError("augment: '" + name + "' is not one of none, waveform, spectrogram, both");
}

const std::vector<std::string>& model_choices() {
  static const std::vector<std::string> names = {"mlp",     "cnn",   "tcnn",     "rf",  "knn", "svm-linear",
                                                 "svm-rbf", "dtree", "adaboost", "gnb", "qda", "slp"};
  return names;
}

std::string canonical_model(const std::string& name) {
  if (name == "mlp" || name == "cnn" || name == "tcnn") return name;
  try {
    return classic::kind_name(classic::classic_kind_from_name(name));
  } catch (const ConfigError&) {
    throw ConfigError("model: '" + name + "' is not one of " + join(model_choices(), ", "));
  }
}

bool is_spectrogram_model(const std::string& model) { return model == "cnn" || model == "tcnn"; }

std::uint64_t synthetic_participant_seed(std::uint64_t seed, std::size_t index) { return derive_seed(seed, index); }

std::string synthetic_participant_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "participant_%02zu", index + 1);
  return buf;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::vector<GridAxis> default_grid(const std::string& name) {
  const std::string model = canonical_model(name);
  const Json lrs = Json::array({1e-2, 1e-3});
  if (model == "cnn") {
    return {{"n_bands", {8, 16}}, {"conv_layers", {2}}, {"filters", {8, 16}}, {"pools", {1}},
            {"learning_rate", lrs}, {"batch_size", {8}}};
  }
  if (model == "tcnn") {
    return {{"n_bands", {8}},       {"conv_layers", {2}},  {"filters", {8}},          {"pools", {1}},
            {"embedding_dim", {16}}, {"learning_rate", lrs}, {"batch_size", {8}}, {"slp_learning_rate", {1e-2}}};
  }
  if (model == "mlp") {
    return {{"select_k", {16, 32}}, {"hidden_variant", {0, 1, 2}}, {"learning_rate", lrs}, {"batch_size", {8}}};
  }
  std::vector<GridAxis> grid = {{"select_k", {16, 32}}};
  switch (classic::classic_kind_from_name(model)) {
    case classic::ClassicKind::kKnn: grid.push_back({"k", {1, 3, 5, 7, 9}}); break;
    case classic::ClassicKind::kSvmLinear: grid.push_back({"C", {0.1, 1.0, 10.0}}); break;
    case classic::ClassicKind::kSvmRbf:
      grid.push_back({"C", {0.1, 1.0, 10.0}});
      grid.push_back({"gamma", {0.01, 0.1, 1.0}});
      break;
    case classic::ClassicKind::kDtree: grid.push_back({"max_depth", {3, 5, 10, "none"}}); break;
    case classic::ClassicKind::kRforest: grid.push_back({"n_trees", {10, 50, 100}}); break;
    case classic::ClassicKind::kAdaboost: grid.push_back({"n_stumps", {25, 50, 100}}); break;
    case classic::ClassicKind::kGnb: break;
    case classic::ClassicKind::kQda: grid.push_back({"shrinkage", {1e-3, 1e-2, 1e-1}}); break;
    case classic::ClassicKind::kSlp: {
      GridAxis lr{"learning_rate", {}};
      for (double v : nn::TrainConfig::learning_rate_grid()) lr.values.push_back(v);
      grid.push_back(std::move(lr));
      break;
    }
  }
  return grid;
}

std::vector<Json> expand_grid(const std::vector<GridAxis>& grid) {
  std::vector<Json> out = {Json::object()};
  for (const auto& axis : grid) {
    std::vector<Json> next;
    for (const Json& partial : out) {
      for (const Json& v : axis.values) {
        Json c = partial;
        c[axis.name] = v;
        next.push_back(std::move(c));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::vector<GridAxis> ExperimentConfig::effective_grid() const {
  return grid.empty() ? default_grid(model) : grid;
}

void ExperimentConfig::validate() const {
  if (participants.empty() && !(synthetic && synthetic->participants > 0)) {
    throw ConfigError("participants: at least one participant is required");
  }
  if (synthetic && synthetic->per_class < 1) throw ConfigError("synthetic.per_class: must be >= 1");
  if (synthetic && !(synthetic->hihat_blend >= 0.0 && synthetic->hihat_blend <= 1.0)) {
    throw ConfigError("synthetic.hihat_blend: must be in [0, 1]");
  }
  if (canonical_model(model) != model) throw ConfigError("model: use the canonical name '" + canonical_model(model) + "'");
  if (!is_spectrogram_model(model) && (augment == AugmentMode::kSpectrogram || augment == AugmentMode::kBoth)) {
    throw ConfigError("augment: spectrogram transforms need a spectrogram model (cnn or tcnn), got " + model);
  }
  if (n_seeds < 1) throw ConfigError("n_seeds: must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs: must be >= 1");
  if (!(validation_split > 0.0 && validation_split < 1.0)) throw ConfigError("validation_split: must be in (0, 1)");
  if (ranking_trees < 1) throw ConfigError("ranking_trees: must be >= 1");
  if (jobs < 1) throw ConfigError("jobs: must be >= 1");

  const auto axes = effective_grid();
  const auto allowed = allowed_axes(model);
  std::set<std::string> seen;
  for (const auto& axis : axes) {
    if (std::find(allowed.begin(), allowed.end(), axis.name) == allowed.end()) {
      throw ConfigError("grid: axis '" + axis.name + "' does not apply to " + model + " (valid: " + join(allowed, ", ") + ")");
    }
    if (!seen.insert(axis.name).second) throw ConfigError("grid: axis '" + axis.name + "' declared twice");
    if (axis.values.empty()) throw ConfigError("grid: axis '" + axis.name + "' has no values");
  }
  for (const Json& c : expand_grid(axes)) {
    try {
      check_candidate(*this, c);
    } catch (const Error& e) {
      throw ConfigError(std::string(e.what()) + " (grid point " + describe(c) + ")");
    }
  }
}

Json ExperimentConfig::to_json() const {
  Json j;
  Json parts = Json::array();
  for (const auto& p : participants) parts.push_back({{"id", p.id}, {"dir", p.dir.string()}, {"ambiguous", p.ambiguous}});
  j["participants"] = parts;
  if (synthetic) {
    j["synthetic"] = {{"seed", synthetic->seed},
                      {"participants", synthetic->participants},
                      {"per_class", synthetic->per_class},
                      {"hihat_blend", synthetic->hihat_blend}};
  }
  j["model"] = model;
  j["augment"] = augment_name(augment);
  Json g = Json::array();
  for (const auto& axis : grid) g.push_back({{"name", axis.name}, {"values", axis.values}});
  j["grid"] = g;
  j["seed"] = seed;
  j["n_seeds"] = n_seeds;
  j["max_epochs"] = max_epochs;
  j["validation_split"] = validation_split;
  j["ranking_trees"] = ranking_trees;
  j["jobs"] = jobs;
  j["allow_override"] = allow_override;
  j["output_dir"] = output_dir.string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j, std::vector<std::string>* unknown) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> known = {"participants", "data",       "synthetic",      "model",
                                              "augment",      "grid",       "seed",           "n_seeds",
                                              "max_epochs",   "validation_split", "ranking_trees", "jobs",
                                              "deterministic", "allow_override", "output_dir"};
  std::vector<std::string> extra;
  auto note = [&](const std::string& key) { extra.push_back(key); };
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) note(key);
  }
  auto field = [&](const char* key, auto fallback) {
    try {
      return j.value(key, fallback);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string(key) + ": wrong type");
    }
  };

  ExperimentConfig c;
  if (j.contains("data")) c.participants = discover_participants(field("data", std::string()));
  if (j.contains("participants")) {
    const Json& ps = j.at("participants");
    if (!ps.is_array()) throw ConfigError("participants: must be an array");
    for (const Json& p : ps) {
      ParticipantSource src;
      if (p.is_string()) {
        src.dir = p.get<std::string>();
      } else if (p.is_object() && p.contains("dir") && p.at("dir").is_string()) {
        src.dir = p.at("dir").get<std::string>();
        src.id = p.value("id", std::string());
        src.ambiguous = p.value("ambiguous", false);
        for (const auto& [key, value] : p.items()) {
          if (key != "dir" && key != "id" && key != "ambiguous") note("participants." + key);
        }
      } else {
        throw ConfigError("participants: entries must be paths or objects with a \"dir\" field");
      }
      if (src.id.empty()) src.id = src.dir.filename().string();
      c.participants.push_back(std::move(src));
    }
  }
  if (j.contains("synthetic")) {
    const Json& s = j.at("synthetic");
    if (!s.is_object()) throw ConfigError("synthetic: must be an object");
    SyntheticSpec spec;
    try {
      spec.seed = s.value("seed", spec.seed);
      spec.participants = s.value("participants", spec.participants);
      spec.per_class = s.value("per_class", spec.per_class);
      spec.hihat_blend = s.value("hihat_blend", spec.hihat_blend);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("synthetic: wrong field type");
    }
    for (const auto& [key, value] : s.items()) {
      if (key != "seed" && key != "participants" && key != "per_class" && key != "hihat_blend") note("synthetic." + key);
    }
    c.synthetic = spec;
  }
  c.model = canonical_model(field("model", c.model));
  c.augment = augment_from_name(field("augment", augment_name(c.augment)));
  if (j.contains("grid")) {
    const Json& g = j.at("grid");
    auto add_axis = [&](const std::string& name, const Json& values) {
      if (!values.is_array()) throw ConfigError("grid." + name + ": values must be an array");
      c.grid.push_back({name, std::vector<Json>(values.begin(), values.end())});
    };
    if (g.is_object()) {
      for (const auto& [key, value] : g.items()) add_axis(key, value);
    } else if (g.is_array()) {
      for (const Json& axis : g) {
        if (!axis.is_object() || !axis.contains("name") || !axis.at("name").is_string() || !axis.contains("values")) {
          throw ConfigError("grid: array entries need \"name\" and \"values\"");
        }
        add_axis(axis.at("name").get<std::string>(), axis.at("values"));
      }
    } else {
      throw ConfigError("grid: must be an object or an array of axes");
    }
  }
  c.seed = field("seed", c.seed);
  c.n_seeds = field("n_seeds", c.n_seeds);
  c.max_epochs = field("max_epochs", c.max_epochs);
  c.validation_split = field("validation_split", c.validation_split);
  c.ranking_trees = field("ranking_trees", c.ranking_trees);
  c.jobs = field("jobs", c.jobs);
  if (field("deterministic", false)) c.jobs = 1;
  c.allow_override = field("allow_override", c.allow_override);
  c.output_dir = field("output_dir", c.output_dir.string());
  if (unknown) {
    std::sort(extra.begin(), extra.end());
    unknown->insert(unknown->end(), extra.begin(), extra.end());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path, std::vector<std::string>* unknown) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open config");
  // Ordered parse keeps grid axes in declaration order.
  nlohmann::ordered_json oj;
  try {
    oj = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  Json j = Json::parse(oj.dump());
  if (oj.contains("grid") && oj.at("grid").is_object()) {
    Json axes = Json::array();
    for (const auto& [key, value] : oj.at("grid").items()) axes.push_back({{"name", key}, {"values", Json::parse(value.dump())}});
    j["grid"] = axes;
  }
  try {
    return from_json(j, unknown);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<ParticipantSource> discover_participants(const fs::path& data_dir) {
  if (!fs::is_directory(data_dir)) throw DataError(data_dir.string() + ": not a directory");
  if (fs::exists(data_dir / "kick.wav")) return {{data_dir.filename().string(), data_dir, false}};
  std::vector<ParticipantSource> out;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (entry.is_directory()) out.push_back({entry.path().filename().string(), entry.path(), false});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (out.empty()) throw DataError(data_dir.string() + ": no participant directories");
  return out;
}

std::vector<LoadedParticipant> load_participants(const ExperimentConfig& cfg) {
  std::vector<LoadedParticipant> out;
  for (const auto& src : cfg.participants) {
    LoadedParticipant lp{src.id, src.ambiguous, std::nullopt, ""};
    try {
      lp.data = load_participant(src.dir);
    } catch (const std::exception& e) {
      lp.error = e.what();
    }
    out.push_back(std::move(lp));
  }
  if (cfg.synthetic) {
    const SynthOptions opts{cfg.synthetic->hihat_blend};
    const std::size_t base = out.size();
    out.resize(base + cfg.synthetic->participants);
    parallel_for(cfg.synthetic->participants, cfg.jobs, [&](std::size_t i) {
      out[base + i].id = synthetic_participant_id(i);
      out[base + i].data =
          generate_synthetic(synthetic_participant_seed(cfg.synthetic->seed, i), cfg.synthetic->per_class, opts);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Confusion confusion_matrix(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw ContractError("confusion_matrix: length mismatch");
  Confusion c{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= kNumClasses || predicted[i] < 0 || predicted[i] >= kNumClasses) {
      throw ContractError("confusion_matrix: label out of range");
    }
    ++c[truth[i]][predicted[i]];
  }
  return c;
}

double confusion_accuracy(const Confusion& c) {
  std::size_t trace = 0, total = 0;
  for (int i = 0; i < kNumClasses; ++i) {
    trace += c[i][i];
    for (int j = 0; j < kNumClasses; ++j) total += c[i][j];
  }
  if (total == 0) throw ContractError("confusion_accuracy: empty confusion matrix");
  return 100.0 * static_cast<double>(trace) / static_cast<double>(total);
}

double timed_seconds(const std::function<void()>& fn) {
  const auto start = Clock::now();
  fn();
  return round_ms(elapsed(start));
}

double silverman_bandwidth(const std::vector<double>& samples) {
  const std::size_t n = samples.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double iqr = percentile(samples, 75.0) - percentile(samples, 25.0);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return area;
}

KdeCurve gaussian_kde(const std::vector<double>& samples, std::size_t points, double lo, double hi) {
  if (samples.empty()) throw ContractError("gaussian_kde: no samples");
  if (points < 2 || !(hi > lo)) throw ContractError("gaussian_kde: need at least two points on a non-empty range");
  KdeCurve k;
  k.bandwidth = std::max(silverman_bandwidth(samples), kKdeMinBandwidth);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * k.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    double d = 0.0;
    for (double s : samples) {
      const double z = (x - s) / k.bandwidth;
      d += std::exp(-0.5 * z * z);
    }
    k.x.push_back(x);
    k.density.push_back(d * norm);
  }
  // Mass beyond [lo, hi] is folded back so the curve is a density on the range.
  const double area = trapezoid(k.x, k.density);
  if (area > 0.0) {
    for (double& d : k.density) d /= area;
  }
  return k;
}

InterpretabilityReport interpretability_report(const std::vector<std::vector<std::size_t>>& selections,
                                               const std::vector<Confusion>& confusions, std::size_t n_features) {
  InterpretabilityReport r;
  r.feature_tally.assign(n_features, 0);
  for (const auto& sel : selections) {
    for (std::size_t f : sel) {
      if (f >= n_features) throw ContractError("interpretability_report: feature index out of range");
      ++r.feature_tally[f];
    }
  }
  for (const auto& c : confusions) r.confusion = add(r.confusion, c);
  std::size_t worst = 0;
  for (int i = 0; i < kNumClasses; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      if (i != j && r.confusion[i][j] > worst) {
        worst = r.confusion[i][j];
        r.confused_truth = i;
        r.confused_predicted = j;
      }
    }
  }
  return r;
}

Json InterpretabilityReport::to_json() const {
  Json j = {{"feature_tally", feature_tally}, {"confusion", confusion_json(confusion)}};
  if (confused_truth >= 0) {
    j["most_confused"] = {{"truth", std::string(class_name(confused_truth))},
                          {"predicted", std::string(class_name(confused_predicted))},
                          {"count", confusion[confused_truth][confused_predicted]}};
  } else {
    j["most_confused"] = nullptr;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

ExperimentReport run_grid_search(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data,
                                 const SelectionHook& hook) {
  cfg.validate();
  if (data.empty()) throw DataError("grid search: no participants");
  const Sweep sweep = make_sweep(cfg, expand_grid(cfg.effective_grid()));

  ExperimentReport report;
  report.model = cfg.model;
  report.augment = augment_name(cfg.augment);
  report.participants = sweep_all(cfg, data, sweep, derive_seed(cfg.seed, kModelStream), false, hook);

  std::vector<std::vector<std::size_t>> selections;
  std::vector<Confusion> confusions;
  TimingTable timing;
  double sum = 0.0;
  for (const auto& r : report.participants) {
    if (!r.ok()) continue;
    sum += r.test_accuracy;
    selections.push_back(r.selected_features);
    confusions.push_back(r.confusion);
    timing.rows.push_back({r.id, r.train_seconds, r.test_seconds, r.test_accuracy});
  }
  if (confusions.empty()) {
    throw DataError("grid search: every participant failed; first error: " + report.participants.front().error);
  }
  const double n = static_cast<double>(confusions.size());
  report.mean_accuracy = sum / n;
  for (const auto& row : timing.rows) {
    timing.mean_train_seconds += row.train_seconds / n;
    timing.mean_test_seconds += row.test_seconds / n;
  }
  timing.mean_train_seconds = round_ms(timing.mean_train_seconds);
  timing.mean_test_seconds = round_ms(timing.mean_test_seconds);
  report.timing = std::move(timing);
  report.interpretability = interpretability_report(selections, confusions, kNumFeatures);
  return report;
}

ExperimentReport run_grid_search(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_grid_search(cfg, load_participants(cfg));
}

TimingTable measure_efficiency(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data,
                               const std::vector<ParticipantResult>& winners) {
  if (winners.size() != data.size()) throw ContractError("measure_efficiency: one winner per participant expected");
  cfg.validate();
  std::vector<std::optional<TimingRow>> rows(data.size());
  parallel_for(data.size(), cfg.jobs, [&](std::size_t i) {
    if (!winners[i].ok() || !data[i].data) return;
    const Json& c = winners[i].hyperparameters;
    const Sweep sweep = make_sweep(cfg, {c});
    TimingRow row{data[i].id, 0.0, 0.0, 0.0};
    std::optional<Prepared> p;
    std::optional<Model> m;
    row.train_seconds = timed_seconds([&] {
      p = prepare(cfg, data[i].data->train, i, sweep.bands, sweep.need_ranking);
      m = fit_candidate(cfg, *p, c, derive_seed(derive_seed(cfg.seed, kModelStream), i));
    });
    std::vector<int> predicted;
    row.test_seconds = timed_seconds([&] { predicted = predict_test(cfg, *p, *m, data[i].data->test); });
    row.test_accuracy = percent(predicted, data[i].data->test.labels);
    rows[i] = row;
  });
  TimingTable t;
  for (auto& r : rows) {
    if (r) t.rows.push_back(*r);
  }
  if (t.rows.empty()) return t;
  const double n = static_cast<double>(t.rows.size());
  for (const auto& r : t.rows) {
    t.mean_train_seconds += r.train_seconds / n;
    t.mean_test_seconds += r.test_seconds / n;
  }
  t.mean_train_seconds = round_ms(t.mean_train_seconds);
  t.mean_test_seconds = round_ms(t.mean_test_seconds);
  return t;
}

StabilitySamples run_stability_hyper(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data) {
  cfg.validate();
  const Sweep sweep = make_sweep(cfg, expand_grid(cfg.effective_grid()));
  const auto results = sweep_all(cfg, data, sweep, derive_seed(cfg.seed, kModelStream), true, {});
  return summarize(sweep.candidates, results, sweep.candidates.size());
}

std::size_t best_sample(const StabilitySamples& s) {
  if (s.validation.empty()) throw ContractError("best_sample: no samples");
  return static_cast<std::size_t>(std::max_element(s.validation.begin(), s.validation.end()) - s.validation.begin());
}

StabilitySamples run_stability_seed(const ExperimentConfig& cfg, const std::vector<LoadedParticipant>& data,
                                    const Json& best, std::size_t n_seeds) {
  cfg.validate();
  if (n_seeds < 1) throw ConfigError("n_seeds: must be >= 1");
  check_candidate(cfg, best);
  const Sweep sweep = make_sweep(cfg, {best});
  std::vector<Json> labels;
  std::vector<ParticipantResult> merged(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    merged[i].id = data[i].id;
    if (!data[i].data) merged[i].error = data[i].error;
  }
  // Data split and augmentation stay fixed; only the model seed changes.
  std::vector<std::optional<Prepared>> prepared(data.size());
  parallel_for(data.size(), cfg.jobs, [&](std::size_t i) {
    if (!data[i].data) return;
    try {
      prepared[i] = prepare(cfg, data[i].data->train, i, sweep.bands, sweep.need_ranking);
    } catch (const Error& e) {
      merged[i].error = e.what();
    }
  });
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = derive_seed(cfg.seed, kSeedStudyStream + 16 * (s + 1));
    labels.push_back({{"seed_index", s}, {"seed", seed}});
    std::vector<CandidateResult> slot(data.size());
    parallel_for(data.size(), cfg.jobs, [&](std::size_t i) {
      if (!prepared[i]) return;
      try {
        const Model m = fit_candidate(cfg, *prepared[i], best, derive_seed(seed, i));
        slot[i].validation_accuracy = percent(m.validation_predictions, prepared[i]->val_labels);
        slot[i].test_accuracy = percent(predict_test(cfg, *prepared[i], m, data[i].data->test), data[i].data->test.labels);
      } catch (const Error& e) {
        slot[i].error = e.what();
      }
    });
    for (std::size_t i = 0; i < data.size(); ++i) merged[i].candidates.push_back(std::move(slot[i]));
  }
  return summarize(std::move(labels), merged, n_seeds);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

Json ExperimentReport::to_json() const {
  Json parts = Json::array();
  for (const auto& r : participants) {
    Json p = {{"id", r.id}, {"ambiguous", r.ambiguous}};
    if (!r.ok()) {
      p["error"] = r.error;
    } else {
      p["hyperparameters"] = r.hyperparameters;
      p["winner_index"] = r.winner;
      p["validation_accuracy"] = r.validation_accuracy;
      p["test_accuracy"] = r.test_accuracy;
      p["confusion"] = confusion_json(r.confusion);
      p["selected_features"] = r.selected_features;
      Json cands = Json::array();
      for (const auto& c : r.candidates) {
        Json cj = {{"hyperparameters", c.hyperparameters}, {"validation_accuracy", c.validation_accuracy}};
        if (!c.error.empty()) cj["error"] = c.error;
        cands.push_back(std::move(cj));
      }
      p["candidates"] = cands;
    }
    parts.push_back(std::move(p));
  }
  Json j = {{"model", model},
            {"augment", augment},
            {"participants", parts},
            {"mean_accuracy", mean_accuracy},
            {"interpretability", interpretability.to_json()}};
  if (timing) {
    j["timing"] = {{"mean_train_seconds", timing->mean_train_seconds}, {"mean_test_seconds", timing->mean_test_seconds}};
  }
  if (stability_hyper) j["stability_hyper"] = stability_json(*stability_hyper);
  if (stability_seed) j["stability_seed"] = stability_json(*stability_seed);
  if (!best_hyperparameters.is_null()) j["best_hyperparameters"] = best_hyperparameters;
  return j;
}

void ExperimentReport::write(const fs::path& dir) const {
  fs::create_directories(dir);
  if (!participants.empty()) {
    write_text(dir / "report.json", to_json().dump(2) + "\n");

    std::string acc = "participant,ambiguous,status,validation_accuracy,test_accuracy,hyperparameters\n";
    for (const auto& r : participants) {
      acc += r.id + "," + (r.ambiguous ? "true" : "false") + ",";
      acc += r.ok() ? "ok," + fmt(r.validation_accuracy) + "," + fmt(r.test_accuracy) + "," + describe(r.hyperparameters)
                    : std::string("error,,,");
      acc += "\n";
    }
    acc += "mean,,," + std::string(",") + fmt(mean_accuracy) + ",\n";
    write_text(dir / "accuracy.csv", acc);

    std::string tally = "feature_index,feature,count\n";
    const auto& names = feature_names();
    for (std::size_t f = 0; f < interpretability.feature_tally.size(); ++f) {
      tally += std::to_string(f) + "," + names[f] + "," + std::to_string(interpretability.feature_tally[f]) + "\n";
    }
    write_text(dir / "feature_tally.csv", tally);
  }
  if (timing) {
    std::string t = "participant,train_seconds,test_seconds\n";
    for (const auto& r : timing->rows) t += r.id + "," + fmt_ms(r.train_seconds) + "," + fmt_ms(r.test_seconds) + "\n";
    t += "mean," + fmt_ms(timing->mean_train_seconds) + "," + fmt_ms(timing->mean_test_seconds) + "\n";
    write_text(dir / "timing.csv", t);
  }
  if (stability_hyper || stability_seed) {
    Json j = {{"model", model}, {"augment", augment}};
    if (stability_hyper) j["stability_hyper"] = stability_json(*stability_hyper);
    if (stability_seed) j["stability_seed"] = stability_json(*stability_seed);
    if (!best_hyperparameters.is_null()) j["best_hyperparameters"] = best_hyperparameters;
    write_text(dir / "stability.json", j.dump(2) + "\n");
  }
  if (stability_hyper) {
    write_text(dir / "stability_hyper.csv", stability_csv(*stability_hyper, "hyperparameters"));
    write_text(dir / "stability_hyper_kde.csv", kde_csv(stability_hyper->kde));
  }
  if (stability_seed) {
    write_text(dir / "stability_seed.csv", stability_csv(*stability_seed, "seed"));
    write_text(dir / "stability_seed_kde.csv", kde_csv(stability_seed->kde));
  }
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

struct TrainedPipeline::State {
  Standardizer standardizer;
  Model model;
};

TrainedPipeline train_pipeline(const ExperimentConfig& cfg, const Json& candidate, const UtteranceDataset& train) {
  cfg.validate();
  check_candidate(cfg, candidate);
  const Sweep sweep = make_sweep(cfg, {candidate});
  const auto start = Clock::now();
  const Prepared p = prepare(cfg, train, 0, sweep.bands, sweep.need_ranking);
  Model m = fit_candidate(cfg, p, candidate, derive_seed(derive_seed(cfg.seed, kModelStream), 0));
  TrainedPipeline out;
  out.model = cfg.model;
  out.hyperparameters = candidate;
  out.validation_accuracy = percent(m.validation_predictions, p.val_labels);
  out.seconds = round_ms(elapsed(start));
  m.validation_predictions.clear();
  out.state = std::make_shared<const TrainedPipeline::State>(TrainedPipeline::State{p.standardizer, std::move(m)});
  return out;
}

std::vector<int> TrainedPipeline::predict(const UtteranceDataset& clips) const {
  if (!state) throw ContractError("TrainedPipeline: not trained");
  return predict_clips(model, state->standardizer, state->model, clips);
}

Json TrainedPipeline::to_json() const {
  if (!state) throw ContractError("TrainedPipeline: not trained");
  const Model& m = state->model;
  Json j = {{"format", "qvp-checkpoint"},
            {"version", 1},
            {"kind", "pipeline"},
            {"model", model},
            {"hyperparameters", hyperparameters},
            {"validation_accuracy", validation_accuracy},
            {"seconds", seconds},
            {"n_bands", m.n_bands},
            {"columns", m.columns},
            {"standardizer", {{"mean", state->standardizer.mean}, {"stddev", state->standardizer.stddev}}}};
  if (m.net) j["network"] = m.net->to_json();
  if (m.slp) j["slp"] = m.slp->to_json();
  if (m.classic) j["classic"] = m.classic->to_json();
  return j;
}

TrainedPipeline TrainedPipeline::from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != "qvp-checkpoint") throw DataError("not a qvp checkpoint");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    if (j.at("kind").get<std::string>() != "pipeline") throw DataError("checkpoint holds a bare model, not a pipeline");
    TrainedPipeline t;
    t.model = canonical_model(j.at("model").get<std::string>());
    t.hyperparameters = j.at("hyperparameters");
    t.validation_accuracy = j.value("validation_accuracy", 0.0);
    t.seconds = j.value("seconds", 0.0);
    State st;
    st.model.n_bands = j.at("n_bands").get<std::size_t>();
    st.model.columns = j.at("columns").get<std::vector<std::size_t>>();
    st.standardizer.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
    st.standardizer.stddev = j.at("standardizer").at("stddev").get<std::vector<double>>();
    if (j.contains("network")) st.model.net = nn::TrainedNetwork::from_json(j.at("network"));
    if (j.contains("slp")) st.model.slp = nn::TrainedNetwork::from_json(j.at("slp"));
    if (j.contains("classic")) st.model.classic = classic::ClassicTrainedModel::from_json(j.at("classic"));
    if (!st.model.net && !st.model.classic) throw DataError("checkpoint has no model payload");
    t.state = std::make_shared<const State>(std::move(st));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed pipeline checkpoint: ") + e.what());
  }
}

void TrainedPipeline::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, to_json().dump() + "\n");
}

TrainedPipeline TrainedPipeline::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open checkpoint");
  try {
    return from_json(Json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace qvp::experiment
