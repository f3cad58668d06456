#include "qvp/cli.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>

#include "CLI11.hpp"
#include "qvp/augment.h"
#include "qvp/dsp.h"
#include "qvp/error.h"
#include "qvp/experiment.h"
#include "qvp/featsel.h"
#include "qvp/nn/gradcheck.h"
#include "qvp/parallel.h"

namespace qvp::cli {

namespace fs = std::filesystem;
using experiment::ExperimentConfig;
using experiment::Json;

namespace {

struct Options {
  std::string config, data, out, checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model, augment;
  std::optional<std::size_t> mel_bands, select_k, participants, per_class, n_seeds;
  std::optional<double> hihat_blend;
  std::optional<int> jobs;
  int trials = 100;
  bool deterministic = false;
};

std::string joined(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

int jobs_of(const Options& o) { return o.deterministic ? 1 : o.jobs.value_or(1); }

void set_axis(ExperimentConfig& cfg, const std::string& name, Json value) {
  if (cfg.grid.empty()) cfg.grid = cfg.effective_grid();
  for (auto& axis : cfg.grid) {
    if (axis.name == name) {
      axis.values = {std::move(value)};
      return;
    }
  }
  cfg.grid.insert(cfg.grid.begin(), {name, {std::move(value)}});
}

// Config file first, then flag overrides.
ExperimentConfig build_config(const Options& o, std::ostream& err) {
  ExperimentConfig cfg;
  if (!o.config.empty()) {
    std::vector<std::string> unknown;
    cfg = ExperimentConfig::load(o.config, &unknown);
    if (!unknown.empty()) err << "warning: " << o.config << ": unknown config keys ignored: " << joined(unknown) << "\n";
  }
  if (!o.data.empty()) cfg.participants = experiment::discover_participants(o.data);
  if (o.participants || o.per_class || o.hihat_blend) {
    if (!cfg.synthetic) cfg.synthetic = experiment::SyntheticSpec{};
    if (o.participants) cfg.synthetic->participants = *o.participants;
    if (o.per_class) cfg.synthetic->per_class = *o.per_class;
    if (o.hihat_blend) cfg.synthetic->hihat_blend = *o.hihat_blend;
  }
  if (o.model) {
    const std::string m = experiment::canonical_model(*o.model);
    if (m != cfg.model && o.config.empty()) cfg.grid.clear();
    cfg.model = m;
  }
  if (o.augment) cfg.augment = experiment::augment_from_name(*o.augment);
  if (o.seed) cfg.seed = *o.seed;
  if (o.mel_bands) set_axis(cfg, "n_bands", *o.mel_bands);
  if (o.select_k) set_axis(cfg, "select_k", *o.select_k);
  if (o.n_seeds) cfg.n_seeds = *o.n_seeds;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.deterministic) cfg.jobs = 1;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

std::vector<experiment::LoadedParticipant> load_checked(const ExperimentConfig& cfg, std::ostream& err) {
  auto data = experiment::load_participants(cfg);
  for (const auto& lp : data) {
    if (!lp.error.empty()) err << "warning: participant " << lp.id << ": " << lp.error << "\n";
  }
  return data;
}

std::vector<experiment::ParticipantSource> sources(const Options& o) {
  return experiment::discover_participants(o.data);
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_synth(const Options& o, std::ostream& out) {
  const std::uint64_t seed = o.seed.value_or(7);
  const std::size_t n = o.participants.value_or(8), per_class = o.per_class.value_or(25);
  if (n < 1 || per_class < 1) throw ConfigError("gen-synth: --participants and --per-class must be >= 1");
  const SynthOptions opts{o.hihat_blend.value_or(0.0)};
  parallel_for(n, jobs_of(o), [&](std::size_t i) {
    write_participant(fs::path(o.out) / experiment::synthetic_participant_id(i),
                      generate_synthetic(experiment::synthetic_participant_seed(seed, i), per_class, opts));
  });
  out << "wrote " << n << " participants (" << per_class << " per class) to " << o.out << "\n";
  return kExitOk;
}

void write_mel_csv(const fs::path& path, const SpectrogramDataset& ds, std::size_t n) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "label,provenance";
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) f << ",band" << r << "_frame" << c;
  }
  f << "\n";
  f.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    f << class_name(ds.labels[i]) << "," << ds.provenance[i];
    for (double v : ds.specs[i].values) f << "," << v;
    f << "\n";
  }
}

int cmd_features(const Options& o, std::ostream& out) {
  fs::create_directories(o.out);
  if (o.mel_bands && !is_valid_band_count(*o.mel_bands)) throw ConfigError("--mel-bands must be one of 8, 12, 16");
  for (const auto& src : sources(o)) {
    const ParticipantData pd = load_participant(src.dir);
    for (const auto* ds : {&pd.train, &pd.test}) {
      const std::string split = ds == &pd.train ? "train" : "test";
      const Matrix x = feature_matrix(*ds, jobs_of(o));
      write_feature_csv(fs::path(o.out) / (src.id + "_" + split + "_features.csv"), x, ds->labels, feature_names());
      if (o.mel_bands) {
        write_mel_csv(fs::path(o.out) / (src.id + "_" + split + "_mel" + std::to_string(*o.mel_bands) + ".csv"),
                      spectrogram_dataset(*ds, *o.mel_bands, jobs_of(o)), *o.mel_bands);
      }
    }
    out << src.id << ": " << pd.train.size() << " train, " << pd.test.size() << " test clips\n";
  }
  return kExitOk;
}

int cmd_augment(const Options& o, std::ostream& out) {
  const auto mode = experiment::augment_from_name(o.augment.value_or("waveform"));
  const std::size_t n_bands = o.mel_bands.value_or(8);
  if (!is_valid_band_count(n_bands)) throw ConfigError("--mel-bands must be one of 8, 12, 16");
  const std::uint64_t seed = o.seed.value_or(0);
  const auto srcs = sources(o);
  for (std::size_t p = 0; p < srcs.size(); ++p) {
    ParticipantData pd = load_participant(srcs[p].dir);
    const std::uint64_t s = derive_seed(seed, p);
    if (mode == experiment::AugmentMode::kWaveform || mode == experiment::AugmentMode::kBoth) {
      pd.train = expand_dataset(pd.train, AugmentationPlan::waveform_default(s), jobs_of(o));
    }
    const fs::path dir = fs::path(o.out) / srcs[p].id;
    write_participant(dir, pd);
    std::ofstream prov(dir / "provenance.csv");
    prov << "index,label,provenance\n";
    for (std::size_t i = 0; i < pd.train.size(); ++i) {
      prov << i << "," << class_name(pd.train.labels[i]) << "," << pd.train.provenance[i] << "\n";
    }
    std::size_t total = pd.train.size();
    if (mode == experiment::AugmentMode::kSpectrogram || mode == experiment::AugmentMode::kBoth) {
      const auto specs = expand_dataset(spectrogram_dataset(pd.train, n_bands, jobs_of(o)),
                                        AugmentationPlan::spectrogram_default(derive_seed(s, n_bands)), jobs_of(o));
      write_mel_csv(dir / ("train_mel" + std::to_string(n_bands) + ".csv"), specs, n_bands);
      total = specs.size();
    }
    out << srcs[p].id << ": " << total << " training examples\n";
  }
  return kExitOk;
}

int cmd_select(const Options& o, std::ostream& out) {
  const std::size_t k = o.select_k.value_or(8);
  fs::create_directories(o.out);
  const auto srcs = sources(o);
  for (std::size_t p = 0; p < srcs.size(); ++p) {
    const ParticipantData pd = load_participant(srcs[p].dir);
    const Matrix x = Standardizer::fit(feature_matrix(pd.train, jobs_of(o))).apply(feature_matrix(pd.train, jobs_of(o)));
    const auto ranking = forest_importances(x, pd.train.labels, 100, derive_seed(o.seed.value_or(0), p),
                                            ImportanceMethod::kImpurityDecrease, jobs_of(o));
    write_ranking_csv(fs::path(o.out) / (srcs[p].id + "_ranking.csv"), ranking, feature_names());
    out << srcs[p].id << ":";
    for (std::size_t f : select_top_k(ranking, k)) out << " " << feature_names()[f];
    out << "\n";
  }
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = build_config(o, err);
  const auto data = load_checked(cfg, err);
  if (data.size() != 1) throw DataError("train: --data must name exactly one participant (found " + std::to_string(data.size()) + ")");
  if (!data[0].data) throw DataError("train: " + data[0].error);
  const auto candidates = experiment::expand_grid(cfg.effective_grid());
  if (candidates.size() > 1) {
    err << "note: training the first of " << candidates.size() << " grid points; grid-search selects among them\n";
  }
  const auto pipe = experiment::train_pipeline(cfg, candidates.front(), data[0].data->train);
  const fs::path path = cfg.output_dir / "model.json";
  pipe.save(path);
  out << cfg.model << " " << candidates.front().dump() << " validation accuracy " << percent(pipe.validation_accuracy)
      << "% (" << pipe.seconds << " s), saved to " << path.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const auto pipe = experiment::TrainedPipeline::load(o.checkpoint);
  Json results = Json::array();
  double sum = 0.0;
  const auto srcs = sources(o);
  for (const auto& src : srcs) {
    const ParticipantData pd = load_participant(src.dir);
    const auto c = experiment::confusion_matrix(pipe.predict(pd.test), pd.test.labels);
    const double acc = experiment::confusion_accuracy(c);
    sum += acc;
    out << src.id << ": " << percent(acc) << "%\n";
    Json rows = Json::array();
    for (const auto& row : c) rows.push_back(row);
    results.push_back({{"participant", src.id}, {"accuracy", acc}, {"confusion", rows}});
  }
  out << "mean: " << percent(sum / static_cast<double>(srcs.size())) << "%\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "evaluation.json")
        << Json{{"model", pipe.model}, {"hyperparameters", pipe.hyperparameters}, {"results", results}}.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_grid_search(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = build_config(o, err);
  const auto data = load_checked(cfg, err);
  const auto report = experiment::run_grid_search(cfg, data);
  report.write(cfg.output_dir);
  for (const auto& r : report.participants) {
    if (r.ok()) {
      out << r.id << ": test " << percent(r.test_accuracy) << "% (validation " << percent(r.validation_accuracy)
          << "%) " << r.hyperparameters.dump() << "\n";
    } else {
      err << "warning: participant " << r.id << " failed: " << r.error << "\n";
    }
  }
  out << cfg.model << " (" << experiment::augment_name(cfg.augment) << "): mean test accuracy "
      << percent(report.mean_accuracy) << "%, mean train " << report.timing->mean_train_seconds << " s, mean test "
      << report.timing->mean_test_seconds << " s; reports in " << cfg.output_dir.string() << "\n";
  return kExitOk;
}

int cmd_stability(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = build_config(o, err);
  const auto data = load_checked(cfg, err);
  experiment::ExperimentReport report;
  report.model = cfg.model;
  report.augment = experiment::augment_name(cfg.augment);
  report.stability_hyper = experiment::run_stability_hyper(cfg, data);
  report.best_hyperparameters = report.stability_hyper->labels[experiment::best_sample(*report.stability_hyper)];
  report.stability_seed = experiment::run_stability_seed(cfg, data, report.best_hyperparameters, cfg.n_seeds);
  report.write(cfg.output_dir);
  auto summary = [&](const char* name, const std::vector<double>& s) {
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    double ss = 0.0;
    for (double v : s) ss += (v - mean) * (v - mean);
    out << name << ": " << s.size() << " samples, mean " << percent(mean) << "%, sd "
        << percent(std::sqrt(ss / static_cast<double>(s.size()))) << "\n";
  };
  summary("hyperparameters", report.stability_hyper->samples);
  out << "best by validation: " << report.best_hyperparameters.dump() << "\n";
  summary("seeds", report.stability_seed->samples);
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  const fs::path dir = o.data.empty() ? fs::path(o.out) : fs::path(o.data);
  const fs::path path = dir / "report.json";
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open report");
  Json j;
  try {
    j = Json::parse(in);
    out << "model " << j.at("model").get<std::string>() << ", augment " << j.at("augment").get<std::string>() << "\n";
    for (const auto& p : j.at("participants")) {
      out << "  " << p.at("id").get<std::string>() << ": ";
      if (p.contains("error")) {
        out << "error: " << p.at("error").get<std::string>() << "\n";
      } else {
        out << percent(p.at("test_accuracy").get<double>()) << "%\n";
      }
    }
    out << "mean test accuracy " << percent(j.at("mean_accuracy").get<double>()) << "%\n";
    const Json& interp = j.at("interpretability");
    if (interp.at("most_confused").is_null()) {
      out << "no test errors\n";
    } else {
      const Json& mc = interp.at("most_confused");
      out << "most confused: " << mc.at("truth").get<std::string>() << " -> " << mc.at("predicted").get<std::string>()
          << " (" << mc.at("count").get<std::size_t>() << ")\n";
    }
    const auto tally = interp.at("feature_tally").get<std::vector<std::size_t>>();
    std::vector<std::size_t> order(tally.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return tally[a] > tally[b]; });
    if (!tally.empty() && tally[order[0]] > 0) {
      out << "most selected features:";
      for (std::size_t i = 0; i < std::min<std::size_t>(10, order.size()) && tally[order[i]] > 0; ++i) {
        out << " " << feature_names()[order[i]] << "(" << tally[order[i]] << ")";
      }
      out << "\n";
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return kExitOk;
}

int cmd_gradient_check(const Options& o, std::ostream& out) {
  const auto report = nn::gradient_check(1e-4, o.trials, o.seed.value_or(0));
  for (const auto& e : report.entries) {
    out << (e.passed ? "ok   " : "FAIL ") << e.name << " max relative error " << e.max_relative_error << "\n";
  }
  out << (report.passed() ? "all gradients agree" : "gradient mismatch") << " (tolerance 1e-4, " << o.trials
      << " trials)\n";
  return report.passed() ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Vocal percussion classification experiments", "qvp"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  Options o;

  std::vector<std::string> models = experiment::model_choices();
  const std::vector<std::string> augments = {"none", "waveform", "spectrogram", "both"};
  const std::vector<std::size_t> bands = {8, 12, 16};
  const std::vector<std::size_t> ks = {1, 2, 4, 8, 16, 32};

  auto data = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--data", o.data, "Participant directory, or a directory of participant directories");
    if (required) opt->required();
  };
  auto output = [&](CLI::App* c, bool required, const std::string& what) {
    auto* opt = c->add_option("--out", o.out, what);
    if (required) opt->required();
  };
  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed"); };
  auto run = [&](CLI::App* c) {
    c->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
    c->add_flag("--deterministic", o.deterministic, "Sequential execution (forces --jobs 1)");
  };
  auto experiment_flags = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    data(c, false);
    output(c, false, "Output directory");
    seed(c);
    c->add_option("--model", o.model, "Model family")->check(CLI::IsMember(models));
    c->add_option("--mel-bands", o.mel_bands, "Spectrogram size N (N x N)")->check(CLI::IsMember(bands));
    c->add_option("--select-k", o.select_k, "Number of selected features")->check(CLI::IsMember(ks));
    c->add_option("--augment", o.augment, "Augmentation")->check(CLI::IsMember(augments));
    c->add_option("--participants", o.participants, "Synthetic participants (without --data)");
    c->add_option("--per-class", o.per_class, "Synthetic utterances per class (without --data)");
    c->add_option("--hihat-blend", o.hihat_blend, "Synthetic test hi-hat decay blending")->check(CLI::Range(0.0, 1.0));
    run(c);
  };

  auto* gen = app.add_subcommand("gen-synth", "Write synthetic participant directories");
  output(gen, true, "Destination directory");
  seed(gen);
  gen->add_option("--participants", o.participants, "Number of participants (default 8)");
  gen->add_option("--per-class", o.per_class, "Utterances per class (default 25)");
  gen->add_option("--hihat-blend", o.hihat_blend, "Test hi-hat decay blending in [0, 1]")->check(CLI::Range(0.0, 1.0));
  run(gen);

  auto* features = app.add_subcommand("features", "Write engineered features (and optional spectrograms) as CSV");
  data(features, true);
  output(features, true, "Destination directory");
  features->add_option("--mel-bands", o.mel_bands, "Also write N x N spectrograms")->check(CLI::IsMember(bands));
  run(features);

  auto* augment = app.add_subcommand("augment", "Expand training splits with augmentation");
  data(augment, true);
  output(augment, true, "Destination directory");
  seed(augment);
  augment->add_option("--augment", o.augment, "Augmentation (default waveform)")->check(CLI::IsMember(augments));
  augment->add_option("--mel-bands", o.mel_bands, "Spectrogram size for spectrogram augmentation")->check(CLI::IsMember(bands));
  run(augment);

  auto* select = app.add_subcommand("select", "Rank features by forest importance");
  data(select, true);
  output(select, true, "Destination directory");
  seed(select);
  select->add_option("--select-k", o.select_k, "Features to print (default 8)")->check(CLI::IsMember(ks));
  run(select);

  auto* train = app.add_subcommand("train", "Train the first grid point on one participant and save it");
  experiment_flags(train);

  auto* evaluate = app.add_subcommand("evaluate", "Score a saved pipeline on test splits");
  evaluate->add_option("--checkpoint", o.checkpoint, "Pipeline written by train")->required()->check(CLI::ExistingFile);
  data(evaluate, true);
  output(evaluate, false, "Write evaluation.json here");

  auto* grid = app.add_subcommand("grid-search", "Select hyperparameters per participant and report test accuracy");
  experiment_flags(grid);

  auto* stability = app.add_subcommand("stability", "Hyperparameter and seed stability studies");
  experiment_flags(stability);
  stability->add_option("--n-seeds", o.n_seeds, "Seeds in the seed study (default 30)")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Summarize a grid-search output directory");
  data(report, false);
  output(report, false, "Report directory (when --data is not given)");

  auto* grad = app.add_subcommand("gradient-check", "Compare analytic and numeric gradients");
  seed(grad);
  grad->add_option("--trials", o.trials, "Random trials per check (default 100)")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }
  if (report->parsed() && o.data.empty() && o.out.empty()) {
    err << "report: --data or --out is required\n" << report->help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(o, out);
    if (features->parsed()) return cmd_features(o, out);
    if (augment->parsed()) return cmd_augment(o, out);
    if (select->parsed()) return cmd_select(o, out);
    if (train->parsed()) return cmd_train(o, out, err);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (grid->parsed()) return cmd_grid_search(o, out, err);
    if (stability->parsed()) return cmd_stability(o, out, err);
    if (report->parsed()) return cmd_report(o, out);
    if (grad->parsed()) return cmd_gradient_check(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace qvp::cli
