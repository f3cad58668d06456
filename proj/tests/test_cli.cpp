#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "qvp/cli.h"
#include "test_util.h"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = qvp::cli::run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("usage errors exit 1 and list valid values") {
  auto r = run({"train", "--model", "cnn", "--mel-bands", "20"});
  CHECK(r.code == qvp::cli::kExitUsage);
  CHECK(r.err.find("8,12,16") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);

  r = run({"grid-search", "--model", "resnet"});
  CHECK(r.code == qvp::cli::kExitUsage);
  CHECK(r.err.find("svm-rbf") != std::string::npos);

  r = run({"grid-search", "--augment", "everything"});
  CHECK(r.code == qvp::cli::kExitUsage);
  CHECK(r.err.find("spectrogram") != std::string::npos);

  CHECK(run({}).code == qvp::cli::kExitUsage);
  CHECK(run({"fly"}).code == qvp::cli::kExitUsage);
  CHECK(run({"gen-synth"}).code == qvp::cli::kExitUsage);  // --out is required
}

TEST_CASE("every subcommand supports --help without side effects") {
  const auto dir = testutil::temp_dir("cli_help");
  for (const std::string sub : {"gen-synth", "features", "augment", "select", "train", "evaluate", "grid-search",
                                "stability", "report", "gradient-check"}) {
    CAPTURE(sub);
    const auto target = dir / sub;
    const auto r = run({sub, "--help", "--out", target.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("Usage") != std::string::npos);
    CHECK_FALSE(fs::exists(target));
  }
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("data and config errors exit 2 and name the source") {
  const auto dir = testutil::temp_dir("cli_errors");
  auto r = run({"grid-search", "--data", (dir / "absent").string(), "--model", "knn"});
  CHECK(r.code == qvp::cli::kExitData);
  CHECK(r.err.find("absent") != std::string::npos);

  std::ofstream(dir / "bad.json") << R"({"synthetic": {"participants": 1}, "model": "knn", "grid": {"k": [4]}})";
  r = run({"grid-search", "--config", (dir / "bad.json").string()});
  CHECK(r.code == qvp::cli::kExitData);
  CHECK(r.err.find("knn") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{ not json";
  r = run({"grid-search", "--config", (dir / "broken.json").string()});
  CHECK(r.code == qvp::cli::kExitData);
  CHECK(r.err.find("broken.json") != std::string::npos);

  r = run({"report", "--out", (dir / "nothing").string()});
  CHECK(r.code == qvp::cli::kExitData);
  CHECK(r.err.find("report.json") != std::string::npos);
}

TEST_CASE("gen-synth writes participant directories") {
  const auto dir = testutil::temp_dir("cli_gen");
  const auto r = run({"gen-synth", "--seed", "7", "--out", dir.string(), "--participants", "3", "--per-class", "4"});
  REQUIRE(r.code == 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++n;
    for (const char* f : {"kick.wav", "kick.csv", "snare.wav", "hh_closed.wav", "hh_opened.wav", "improv.wav", "improv.csv"}) {
      CHECK(fs::exists(e.path() / f));
    }
    const auto p = qvp::load_participant(e.path());
    CHECK(p.train.size() == 16);
  }
  CHECK(n == 3);
}

TEST_CASE("grid-search artifacts are identical under --deterministic") {
  const auto dir = testutil::temp_dir("cli_det");
  REQUIRE(run({"gen-synth", "--out", (dir / "data").string(), "--participants", "2", "--per-class", "10"}).code == 0);
  std::ofstream(dir / "exp.json") << R"({"model": "knn", "grid": {"select_k": [4, 8], "k": [1, 3]},
                                        "ranking_trees": 10, "mystery": true})";
  std::vector<std::string> args = {"grid-search", "--config", (dir / "exp.json").string(), "--data",
                                   (dir / "data").string(), "--deterministic", "--out"};
  auto a_args = args, b_args = args;
  a_args.push_back((dir / "a").string());
  b_args.push_back((dir / "b").string());
  const auto a = run(a_args);
  REQUIRE(a.code == 0);
  CHECK(a.err.find("mystery") != std::string::npos);
  REQUIRE(run(b_args).code == 0);
  for (const char* f : {"accuracy.csv", "feature_tally.csv"}) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  auto ja = nlohmann::json::parse(slurp(dir / "a" / "report.json"));
  auto jb = nlohmann::json::parse(slurp(dir / "b" / "report.json"));
  CHECK(ja["participants"].size() == 2);
  ja.erase("timing");
  jb.erase("timing");
  CHECK(ja == jb);
  CHECK(fs::exists(dir / "a" / "timing.csv"));

  // Flags override the file: a single select_k value.
  auto c_args = args;
  c_args.push_back((dir / "c").string());
  c_args.insert(c_args.end(), {"--select-k", "8"});
  REQUIRE(run(c_args).code == 0);
  const auto jc = nlohmann::json::parse(slurp(dir / "c" / "report.json"));
  CHECK(jc["participants"][0]["candidates"].size() == 2);
  CHECK(jc["participants"][0]["hyperparameters"]["select_k"] == 8);

  const auto rep = run({"report", "--out", (dir / "a").string()});
  CHECK(rep.code == 0);
  CHECK(rep.out.find("mean test accuracy") != std::string::npos);
}

TEST_CASE("train then evaluate a saved pipeline") {
  const auto dir = testutil::temp_dir("cli_train");
  REQUIRE(run({"gen-synth", "--out", (dir / "data").string(), "--participants", "1", "--per-class", "10"}).code == 0);
  const auto p = (dir / "data" / "participant_01").string();
  auto r = run({"train", "--data", p, "--model", "gnb", "--select-k", "8", "--out", (dir / "m").string()});
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(dir / "m" / "model.json"));
  r = run({"evaluate", "--checkpoint", (dir / "m" / "model.json").string(), "--data", p, "--out", (dir / "e").string()});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "e" / "evaluation.json"));
  CHECK(j["model"] == "gnb");
  CHECK(j["results"][0]["accuracy"].get<double>() >= 0.0);
}

TEST_CASE("gradient-check subcommand") {
  const auto r = run({"gradient-check", "--trials", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.find("conv2d") != std::string::npos);
}
