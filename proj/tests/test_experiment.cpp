#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "qvp/dsp.h"
#include "qvp/error.h"
#include "qvp/experiment.h"
#include "test_util.h"

using namespace qvp;
using namespace qvp::experiment;

namespace {

ExperimentConfig small_knn_config(std::size_t participants = 2, std::size_t per_class = 10) {
  ExperimentConfig cfg;
  cfg.synthetic = SyntheticSpec{11, participants, per_class, 0.0};
  cfg.model = "knn";
  cfg.grid = {{"select_k", {4, 8}}, {"k", {1, 3}}};
  cfg.ranking_trees = 10;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double variance(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("grid expansion is a cartesian product in declaration order") {
  const std::vector<GridAxis> grid = {{"b", {1, 2}}, {"a", {"x", "y", "z"}}};
  const auto c = expand_grid(grid);
  REQUIRE(c.size() == 6);
  CHECK(c[0] == Json{{"b", 1}, {"a", "x"}});
  CHECK(c[1] == Json{{"b", 1}, {"a", "y"}});
  CHECK(c[3] == Json{{"b", 2}, {"a", "x"}});
  CHECK(c[5] == Json{{"b", 2}, {"a", "z"}});
  CHECK(expand_grid({}).size() == 1);
}

TEST_CASE("default grids are valid for every family") {
  for (const auto& name : model_choices()) {
    ExperimentConfig cfg;
    cfg.synthetic = SyntheticSpec{};
    cfg.model = canonical_model(name);
    CHECK_NOTHROW(cfg.validate());
    CHECK_FALSE(expand_grid(cfg.effective_grid()).empty());
  }
  CHECK(canonical_model("rf") == "rforest");
  CHECK(canonical_model("svm-rbf") == "svm_rbf");
  CHECK_THROWS_AS(canonical_model("resnet"), ConfigError);
}

TEST_CASE("config validation names the offending field") {
  ExperimentConfig cfg;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("participants"), ConfigError);
  cfg.synthetic = SyntheticSpec{};
  cfg.grid = {{"n_bands", {20}}};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("n_bands"), ConfigError);
  cfg.grid = {{"n_bands", {}}};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("no values"), ConfigError);
  cfg.grid = {{"select_k", {4}}};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("select_k"), ConfigError);
  cfg.grid.clear();
  cfg.model = "rforest";
  cfg.augment = AugmentMode::kSpectrogram;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("augment"), ConfigError);
  cfg.augment = AugmentMode::kWaveform;
  CHECK_NOTHROW(cfg.validate());
  cfg.grid = {{"select_k", {3}}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.allow_override = true;
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS(augment_from_name("all"), ConfigError);
}

TEST_CASE("config files keep grid order and report unknown keys") {
  const auto dir = testutil::temp_dir("config");
  std::ofstream(dir / "exp.json") << R"({
    "synthetic": {"seed": 3, "participants": 2, "per_class": 5, "colour": 1},
    "model": "svm-rbf",
    "grid": {"gamma": [0.1, 1.0], "C": [1.0], "select_k": [8]},
    "seed": 9,
    "deterministic": true,
    "jobs": 4,
    "typo_field": 1
  })";
  std::vector<std::string> unknown;
  const auto cfg = ExperimentConfig::load(dir / "exp.json", &unknown);
  CHECK(unknown == std::vector<std::string>{"synthetic.colour", "typo_field"});
  CHECK(cfg.model == "svm_rbf");
  CHECK(cfg.jobs == 1);
  CHECK(cfg.seed == 9);
  REQUIRE(cfg.grid.size() == 3);
  CHECK(cfg.grid[0].name == "gamma");
  CHECK(cfg.grid[1].name == "C");
  CHECK(cfg.grid[2].name == "select_k");
  CHECK(cfg.synthetic->participants == 2);

  const auto round = ExperimentConfig::from_json(cfg.to_json());
  CHECK(round.grid[0].name == "gamma");
  CHECK(round.to_json() == cfg.to_json());

  std::ofstream(dir / "bad.json") << R"({"model": "cnn", "grid": {"n_bands": [20]}, "synthetic": {}})";
  const auto bad = ExperimentConfig::load(dir / "bad.json");
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("n_bands"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "missing.json"), DataError);
}

TEST_CASE("confusion accuracy is trace over total") {
  const Confusion c = confusion_matrix({0, 1, 2, 3, 3, 2}, {0, 1, 2, 3, 2, 2});
  CHECK(c[2][3] == 1);
  CHECK(c[2][2] == 2);
  CHECK(confusion_accuracy(c) == 100.0 * 5.0 / 6.0);
  CHECK_THROWS_AS(confusion_matrix({0}, {0, 1}), ContractError);
}

TEST_CASE("grid of one candidate selects it") {
  auto cfg = small_knn_config(1);
  cfg.grid = {{"select_k", {8}}, {"k", {3}}};
  const auto report = run_grid_search(cfg);
  REQUIRE(report.participants.size() == 1);
  const auto& r = report.participants[0];
  REQUIRE(r.ok());
  CHECK(r.winner == 0);
  CHECK(r.hyperparameters == Json{{"select_k", 8}, {"k", 3}});
  CHECK(report.mean_accuracy == r.test_accuracy);
  CHECK(report.to_json()["participants"][0]["test_accuracy"] == r.test_accuracy);
}

TEST_CASE("grid search report invariants") {
  const auto cfg = small_knn_config();
  const auto data = load_participants(cfg);
  std::vector<std::string> hooked;
  const auto report = run_grid_search(cfg, data, [&](const std::string& id, const Json&) { hooked.push_back(id); });
  CHECK(hooked == std::vector<std::string>{"participant_01", "participant_02"});
  double sum = 0.0;
  for (std::size_t p = 0; p < report.participants.size(); ++p) {
    const auto& r = report.participants[p];
    REQUIRE(r.ok());
    CHECK(r.candidates.size() == 4);
    // Winner has the best validation score and no earlier candidate ties it.
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      CHECK(r.candidates[i].validation_accuracy <= r.validation_accuracy);
      if (i < r.winner) CHECK(r.candidates[i].validation_accuracy < r.validation_accuracy);
    }
    std::size_t trace = 0, total = 0;
    for (int t = 0; t < kNumClasses; ++t) {
      std::size_t row = 0;
      for (int q = 0; q < kNumClasses; ++q) row += r.confusion[t][q];
      const auto expected = static_cast<std::size_t>(
          std::count(data[p].data->test.labels.begin(), data[p].data->test.labels.end(), t));
      CHECK(row == expected);
      trace += r.confusion[t][t];
      total += row;
    }
    CHECK(r.test_accuracy == 100.0 * static_cast<double>(trace) / static_cast<double>(total));
    CHECK(r.test_accuracy >= 0.0);
    CHECK(r.test_accuracy <= 100.0);
    CHECK(r.selected_features.size() == r.hyperparameters["select_k"].get<std::size_t>());
    sum += r.test_accuracy;
  }
  CHECK(report.mean_accuracy == doctest::Approx(sum / 2).epsilon(1e-12));
  CHECK(report.timing->rows.size() == 2);
}

TEST_CASE("test data does not influence selection") {
  const auto cfg = small_knn_config();
  const auto data = load_participants(cfg);
  auto scrambled = data;
  for (auto& lp : scrambled) {
    auto& test = lp.data->test;
    for (auto& clip : test.clips) std::fill(clip.samples.begin(), clip.samples.end(), 0.0);
    for (int& y : test.labels) y = (y + 1) % kNumClasses;
  }
  const auto a = run_grid_search(cfg, data);
  const auto b = run_grid_search(cfg, scrambled);
  for (std::size_t p = 0; p < a.participants.size(); ++p) {
    CHECK(a.participants[p].winner == b.participants[p].winner);
    CHECK(a.participants[p].validation_accuracy == b.participants[p].validation_accuracy);
  }
}

TEST_CASE("participant failures are recorded and the run continues") {
  auto cfg = small_knn_config(1);
  cfg.participants.push_back({"missing", "/nonexistent/qvp_participant", true});
  auto data = load_participants(cfg);
  REQUIRE(data.size() == 2);
  CHECK_FALSE(data[0].error.empty());
  const auto report = run_grid_search(cfg, data);
  CHECK_FALSE(report.participants[0].ok());
  CHECK(report.participants[0].ambiguous);
  CHECK(report.participants[1].ok());
  CHECK(report.mean_accuracy == report.participants[1].test_accuracy);
  CHECK(report.to_json()["participants"][0].contains("error"));

  data.pop_back();
  CHECK_THROWS_AS(run_grid_search(cfg, data), DataError);
}

TEST_CASE("reruns are bit-identical and independent of jobs") {
  auto cfg = small_knn_config();
  cfg.model = "rforest";
  cfg.grid = {{"select_k", {8}}, {"n_trees", {10, 50}}};
  const auto data = load_participants(cfg);
  const auto a = run_grid_search(cfg, data);
  cfg.jobs = 3;
  const auto b = run_grid_search(cfg, data);
  for (std::size_t p = 0; p < a.participants.size(); ++p) {
    CHECK(a.participants[p].test_accuracy == b.participants[p].test_accuracy);
    CHECK(a.participants[p].confusion == b.participants[p].confusion);
    CHECK(a.participants[p].selected_features == b.participants[p].selected_features);
  }
  const auto dir_a = testutil::temp_dir("rerun_a"), dir_b = testutil::temp_dir("rerun_b");
  a.write(dir_a);
  b.write(dir_b);
  for (const char* f : {"accuracy.csv", "feature_tally.csv"}) CHECK(slurp(dir_a / f) == slurp(dir_b / f));
  CHECK(std::filesystem::exists(dir_a / "report.json"));
  CHECK(std::filesystem::exists(dir_a / "timing.csv"));

  // Timing reruns retrain the winner and reproduce its accuracy exactly.
  const auto t = measure_efficiency(cfg, data, a.participants);
  REQUIRE(t.rows.size() == 2);
  for (std::size_t p = 0; p < 2; ++p) {
    CHECK(t.rows[p].test_accuracy == a.participants[p].test_accuracy);
    CHECK(t.rows[p].train_seconds >= 0.0);
    CHECK(t.rows[p].test_seconds >= 0.0);
  }
}

TEST_CASE("timing of a no-op is non-negative and small") {
  const double s = timed_seconds([] {});
  CHECK(s >= 0.0);
  CHECK(s < 0.05);
  CHECK(timed_seconds([] {}) == std::round(timed_seconds([] {}) * 1000) / 1000);
}

TEST_CASE("silverman bandwidth") {
  // sd = sqrt(2.5), IQR = 4 - 2, so the IQR term is the smaller spread.
  const std::vector<double> s = {1, 2, 3, 4, 5};
  const double expected = 0.9 * (2.0 / 1.34) * std::pow(5.0, -0.2);
  CHECK(silverman_bandwidth(s) == doctest::Approx(expected).epsilon(1e-12));
  const std::vector<double> wide = {0, 0, 0, 10, 10};  // IQR 10 / 1.34 > sd
  double m = 4.0, ss = 0;
  for (double v : wide) ss += (v - m) * (v - m);
  CHECK(silverman_bandwidth(wide) == doctest::Approx(0.9 * std::sqrt(ss / 4) * std::pow(5.0, -0.2)).epsilon(1e-12));
  CHECK(silverman_bandwidth({42.0}) == 0.0);
}

TEST_CASE("kde is a density on [0, 100]") {
  const std::vector<double> interior = {40, 45, 50, 52, 60};
  const auto k = gaussian_kde(interior);
  REQUIRE(k.x.size() == 200);
  CHECK(k.x.front() == 0.0);
  CHECK(k.x.back() == 100.0);
  CHECK(std::abs(trapezoid(k.x, k.density) - 1.0) <= 0.01);
  // Away from the edges the curve matches the textbook estimator.
  const double h = silverman_bandwidth(interior);
  CHECK(k.bandwidth == h);
  const std::size_t i = 100;
  double direct = 0.0;
  for (double s : interior) direct += std::exp(-0.5 * std::pow((k.x[i] - s) / h, 2));
  direct /= interior.size() * h * std::sqrt(2 * std::numbers::pi);
  CHECK(k.density[i] == doctest::Approx(direct).epsilon(1e-3));

  for (const auto& edge : {std::vector<double>{100, 100, 100}, std::vector<double>{0.0}, std::vector<double>{99, 100}}) {
    const auto e = gaussian_kde(edge);
    CHECK(std::abs(trapezoid(e.x, e.density) - 1.0) <= 0.01);
    for (double d : e.density) CHECK(d >= 0.0);
  }
  CHECK_THROWS_AS(gaussian_kde({}), ContractError);
}

TEST_CASE("interpretability report") {
  const Confusion identity = [] {
    Confusion c{};
    for (int i = 0; i < kNumClasses; ++i) c[i][i] = 1;
    return c;
  }();
  const auto r = interpretability_report({{3, 7, 11, 99}}, {identity, identity}, kNumFeatures);
  CHECK(std::count_if(r.feature_tally.begin(), r.feature_tally.end(), [](std::size_t v) { return v > 0; }) == 4);
  for (int i = 0; i < kNumClasses; ++i) {
    for (int j = 0; j < kNumClasses; ++j) CHECK(r.confusion[i][j] == (i == j ? 2u : 0u));
  }
  CHECK(r.confused_truth == -1);
  CHECK(r.to_json()["most_confused"].is_null());

  Confusion hh = identity;
  hh[3][2] = 5;
  hh[0][1] = 2;
  const auto h = interpretability_report({{1, 2}, {2, 5}}, {hh, identity}, kNumFeatures);
  CHECK(h.feature_tally[2] == 2);
  CHECK(h.confused_truth == 3);
  CHECK(h.confused_predicted == 2);
  CHECK(h.to_json()["most_confused"]["truth"] == "hh_opened");
  CHECK_THROWS_AS(interpretability_report({{100}}, {}, kNumFeatures), ContractError);
}

TEST_CASE("stability studies") {
  auto cfg = small_knn_config();
  const auto data = load_participants(cfg);
  const auto hyper = run_stability_hyper(cfg, data);
  CHECK(hyper.samples.size() == 4);
  CHECK(hyper.labels.size() == 4);
  CHECK(std::abs(trapezoid(hyper.kde.x, hyper.kde.density) - 1.0) <= 0.01);
  for (double s : hyper.samples) {
    CHECK(s >= 0.0);
    CHECK(s <= 100.0);
  }
  // Hyper-sweep validation means agree with the grid search scores.
  const auto gs = run_grid_search(cfg, data);
  for (std::size_t g = 0; g < 4; ++g) {
    const double mean = (gs.participants[0].candidates[g].validation_accuracy +
                         gs.participants[1].candidates[g].validation_accuracy) / 2.0;
    CHECK(hyper.validation[g] == doctest::Approx(mean).epsilon(1e-12));
  }
  const Json best = hyper.labels[best_sample(hyper)];

  cfg.model = "rforest";
  cfg.grid = {{"select_k", {8}}, {"n_trees", {10}}};
  const Json rf_best = {{"select_k", 8}, {"n_trees", 10}};
  const auto one = run_stability_seed(cfg, data, rf_best, 1);
  CHECK(one.samples.size() == 1);
  CHECK(variance(one.samples) == 0.0);
  const auto seeds = run_stability_seed(cfg, data, rf_best, 5);
  CHECK(seeds.samples.size() == 5);
  CHECK(seeds.samples[0] == one.samples[0]);
  std::set<std::uint64_t> distinct;
  for (const auto& l : seeds.labels) distinct.insert(l["seed"].get<std::uint64_t>());
  CHECK(distinct.size() == 5);
  CHECK(std::abs(trapezoid(seeds.kde.x, seeds.kde.density) - 1.0) <= 0.01);
  CHECK(run_stability_seed(cfg, data, rf_best, 5).samples == seeds.samples);
  CHECK_FALSE(best.is_null());

  ExperimentReport report;
  report.stability_hyper = hyper;
  report.stability_seed = seeds;
  const auto dir = testutil::temp_dir("stability");
  report.write(dir);
  std::ifstream in(dir / "stability_seed.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 6);
  CHECK(std::filesystem::exists(dir / "stability_hyper_kde.csv"));
}

TEST_CASE("every family runs end to end on a tiny set") {
  for (const std::string model : {"cnn", "tcnn", "mlp", "svm_linear", "svm_rbf", "dtree", "adaboost", "gnb", "qda", "slp"}) {
    CAPTURE(model);
    ExperimentConfig cfg;
    cfg.synthetic = SyntheticSpec{5, 1, 25, 0.0};
    cfg.model = model;
    cfg.max_epochs = 20;
    cfg.ranking_trees = 10;
    auto grid = default_grid(model);
    for (auto& axis : grid) axis.values.resize(1);
    cfg.grid = grid;
    const auto report = run_grid_search(cfg);
    REQUIRE(report.participants[0].ok());
    CHECK(report.participants[0].test_accuracy >= 0.0);
  }
}

TEST_CASE("pipelines reproduce the grid search and survive a checkpoint round trip") {
  for (const std::string model : {"rforest", "mlp", "tcnn"}) {
    CAPTURE(model);
    ExperimentConfig cfg;
    cfg.synthetic = SyntheticSpec{13, 1, 25, 0.3};
    cfg.model = model;
    cfg.ranking_trees = 10;
    cfg.max_epochs = 30;
    auto grid = default_grid(model);
    for (auto& axis : grid) axis.values.resize(1);
    cfg.grid = grid;
    const auto data = load_participants(cfg);
    const auto report = run_grid_search(cfg, data);
    const Json candidate = expand_grid(grid).front();

    const auto pipe = train_pipeline(cfg, candidate, data[0].data->train);
    CHECK(pipe.validation_accuracy == report.participants[0].validation_accuracy);
    const auto& test = data[0].data->test;
    const auto predicted = pipe.predict(test);
    CHECK(confusion_matrix(predicted, test.labels) == report.participants[0].confusion);

    const auto path = testutil::temp_dir("pipeline") / (model + ".json");
    pipe.save(path);
    const auto loaded = TrainedPipeline::load(path);
    CHECK(loaded.model == model);
    CHECK(loaded.hyperparameters == candidate);
    CHECK(loaded.predict(test) == predicted);
  }
  const auto bad = testutil::temp_dir("pipeline_bad") / "x.json";
  std::ofstream(bad) << R"({"format": "other"})";
  CHECK_THROWS_AS(TrainedPipeline::load(bad), DataError);
}
