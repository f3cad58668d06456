#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "qvp/augment.h"
#include "qvp/error.h"
#include "qvp/nn/gradcheck.h"
#include "qvp/nn/optim.h"
#include "qvp/nn/train.h"
#include "test_util.h"

using namespace qvp;
using namespace qvp::nn;

namespace {

Tensor randn(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

TensorDataset spectrogram_tensors(const SpectrogramDataset& ds) {
  const std::size_t n = ds.specs.empty() ? 0 : ds.specs[0].n_bands;
  TensorDataset out{Tensor({ds.size(), 1, n, n}), ds.labels};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::copy(ds.specs[i].values.begin(), ds.specs[i].values.end(), out.inputs.data() + i * n * n);
  }
  return out;
}

// Four well-separated Gaussian clusters in `dim` dimensions.
TensorDataset clusters(std::size_t per_class, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  TensorDataset ds{Tensor({4 * per_class, dim}), {}};
  for (std::size_t i = 0; i < 4 * per_class; ++i) {
    const int c = static_cast<int>(i % 4);
    ds.labels.push_back(c);
    for (std::size_t j = 0; j < dim; ++j) ds.inputs[i * dim + j] = (j % 4 == static_cast<std::size_t>(c) ? 3.0 : 0.0) + noise(rng);
  }
  return ds;
}

}  // namespace

TEST_CASE("conv with an identity kernel reproduces the input") {
  Conv2d conv(1, 1);
  conv.weight.fill(0.0);
  conv.weight[4] = 1.0;
  const Tensor x = randn({2, 1, 5, 4}, 1);
  CHECK(conv.forward(x, Mode::kEval) == x);
}

TEST_CASE("maxpool picks the window maximum") {
  MaxPool2d pool;
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = pool.forward(x, Mode::kEval);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 4.0);
  const Tensor dx = pool.backward(Tensor({1, 1, 1, 1}, {1.0}));
  CHECK(dx.values() == std::vector<double>{0, 0, 0, 1});
  CHECK(pool.output_shape({3, 3, 3}) == Shape{3, 1, 1});
}

TEST_CASE("batchnorm normalizes per channel in train mode") {
  BatchNorm2d bn(3);
  const Tensor x = randn({8, 3, 4, 4}, 2);
  const Tensor y = bn.forward(x, Mode::kTrain);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < 8; ++n) {
      for (std::size_t i = 0; i < 16; ++i) sum += y[(n * 3 + c) * 16 + i];
    }
    const double mean = sum / 128;
    for (std::size_t n = 0; n < 8; ++n) {
      for (std::size_t i = 0; i < 16; ++i) sq += std::pow(y[(n * 3 + c) * 16 + i] - mean, 2);
    }
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(sq / 128 - 1.0) < 1e-6);
  }
  // Eval mode uses frozen running statistics and is idempotent.
  const Tensor e1 = bn.forward(x, Mode::kEval);
  const Tensor e2 = bn.forward(x, Mode::kEval);
  CHECK(e1 == e2);
}

TEST_CASE("network shape errors name the layer") {
  Network net({4});
  net.add(std::make_unique<Dense>(4, 3));
  CHECK_THROWS_AS(net.add(std::make_unique<Dense>(4, 2)), ContractError);
  try {
    net.forward(Tensor({2, 5}), Mode::kEval);
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("network input") != std::string::npos);
  }
}

TEST_CASE("network builders") {
  CHECK(pool_positions(2, 1) == std::vector<std::size_t>{2});
  CHECK(pool_positions(6, 3) == std::vector<std::size_t>{2, 4, 6});
  CHECK(pool_positions(4, 3) == std::vector<std::size_t>{2, 3, 4});

  const auto hidden = NetworkConfig::mlp_hidden_options(100);
  CHECK(hidden[0] == std::vector<std::size_t>{50});
  CHECK(hidden[1] == std::vector<std::size_t>{50, 25});
  CHECK(hidden[2] == std::vector<std::size_t>{25});
  CHECK(NetworkConfig::mlp_hidden_options(5)[1] == std::vector<std::size_t>{3, 2});

  for (std::size_t side : {8u, 12u, 16u}) {
    for (std::size_t pools : {1u, 2u, 3u}) {
      Network net = build_network(NetworkConfig::cnn(side, 2, 8, pools), 1);
      std::size_t expected = side;
      for (std::size_t p = 0; p < pools; ++p) expected /= 2;
      // The dense head reads filters * side^2 after the pools.
      const auto& head = dynamic_cast<Dense&>(net.layer(net.size() - 1));
      CHECK(head.in_features == 8 * expected * expected);
      CHECK(net.output_shape() == Shape{4});
    }
  }
  CHECK(build_network(NetworkConfig::tcnn(12, 4, 8, 2, 32), 1).output_shape() == Shape{32});
  CHECK_THROWS_AS(build_network(NetworkConfig::cnn(12, 3, 8, 1), 1), ConfigError);
  CHECK_THROWS_AS(build_network(NetworkConfig::tcnn(12, 2, 8, 1, 24), 1), ConfigError);
  auto odd = NetworkConfig::cnn(4, 3, 5, 2);
  odd.allow_override = true;
  CHECK_NOTHROW(build_network(odd, 1));
  odd.pools = 3;
  CHECK_THROWS_AS(build_network(odd, 1), ConfigError);

  const auto a = build_network(NetworkConfig::mlp(10, 1), 5).to_json();
  const auto b = build_network(NetworkConfig::mlp(10, 1), 5).to_json();
  CHECK(a == b);
}

TEST_CASE("cross-entropy") {
  const std::vector<int> labels{0, 1, 2, 3};
  const auto uniform = cross_entropy_loss(Tensor({4, 4}, 0.0), labels);
  CHECK(uniform.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor confident({1, 4}, 0.0);
  confident[2] = 1000.0;
  const std::vector<int> two{2};
  const auto sure = cross_entropy_loss(confident, two);
  CHECK(sure.loss >= 0.0);
  CHECK(sure.loss < 1e-12);

  const Tensor logits = randn({4, 4}, 8);
  const auto p = softmax(logits);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(p[i * 4] + p[i * 4 + 1] + p[i * 4 + 2] + p[i * 4 + 3] - 1.0) < 1e-9);

  // Central differences as the oracle.
  const auto analytic = cross_entropy_loss(logits, labels).grad;
  Tensor probe = logits;
  std::vector<double> numeric(16);
  for (std::size_t i = 0; i < 16; ++i) {
    const double h = 1e-5, saved = probe[i];
    probe[i] = saved + h;
    const double lp = cross_entropy_loss(probe, labels).loss;
    probe[i] = saved - h;
    const double lm = cross_entropy_loss(probe, labels).loss;
    probe[i] = saved;
    numeric[i] = (lp - lm) / (2 * h);
  }
  CHECK(relative_error(analytic.values(), numeric) < 1e-6);

  const std::vector<int> bad{0, 1, 2, 4};
  CHECK_THROWS_AS(cross_entropy_loss(logits, bad), ContractError);
}

TEST_CASE("triplet loss values") {
  const std::vector<double> a{0, 0}, p{0, 0}, n{1, 1};
  CHECK(triplet_loss(a, p, n, 0.0) == 0.0);
  const std::vector<double> p5{5, 0}, n2{0, 2};
  CHECK(triplet_loss(a, p5, n2, 0.0) == doctest::Approx(3.0));
  const std::vector<double> p3{3, 0}, n3{0, 3};
  CHECK(triplet_loss(a, p3, n3, 1.0) == doctest::Approx(1.0));
  const std::vector<double> short_n{1};
  CHECK_THROWS_AS(triplet_loss(a, p, short_n, 0.0), ContractError);
}

TEST_CASE("triplet mining") {
  Rng rng(1);
  const Tensor one_class({3, 1}, {0, 1, 2});
  const std::vector<int> same{1, 1, 1};
  CHECK(mine_triplets(one_class, same, TripletStrategy::kHardestNegative, 0.0, rng).empty());

  const Tensor line({4, 1}, {0, 1, 10, 2});
  const std::vector<int> labels{0, 0, 1, 1};
  const auto hard = mine_triplets(line, labels, TripletStrategy::kHardestNegative, 0.0, rng);
  REQUIRE(!hard.empty());
  CHECK(hard[0] == Triplet{0, 1, 3});

  // Anchor 0 with positive at 5: negatives at 1, 2 and 3 violate, 9 does not.
  const Tensor spread({6, 1}, {0, 5, 1, 2, 3, 9});
  const std::vector<int> lab{0, 0, 1, 1, 1, 1};
  std::map<std::size_t, int> freq;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    for (const auto& t : mine_triplets(spread, lab, TripletStrategy::kRandomNegative, 0.0, rng)) {
      if (t.anchor == 0 && t.positive == 1) ++freq[t.negative];
    }
  }
  CHECK(freq.size() == 3);
  CHECK(freq.count(5) == 0);
  for (const auto& [neg, count] : freq) CHECK(std::abs(count / double(draws) - 1.0 / 3.0) < 0.02);
}

TEST_CASE("adam") {
  Tensor w({3}, {0.5, -1.0, 2.0});
  Tensor g({3}, {0.2, -3.0, 0.05});
  const Tensor w0 = w;
  Adam adam;
  adam.step({{&w, &g}}, 0.01);
  for (std::size_t i = 0; i < 3; ++i) {
    const double sign = g[i] > 0 ? 1.0 : -1.0;
    CHECK(std::abs((w[i] - w0[i]) - (-0.01 * sign)) < 1e-6 * 0.01);
  }

  Tensor z({2}, {1.0, 2.0}), zg({2}, 0.0);
  Adam still;
  still.step({{&z, &zg}}, 0.1);
  CHECK(z.values() == std::vector<double>{1.0, 2.0});

  // Minimize w^2 from w = 1.
  Tensor s({1}, {1.0}), sg({1});
  Adam opt;
  for (int i = 0; i < 200; ++i) {
    sg[0] = 2.0 * s[0];
    opt.step({{&s, &sg}}, 0.1);
  }
  CHECK(std::abs(s[0]) < 0.01);
}

TEST_CASE("scheduler and early stopping rules") {
  PlateauScheduler sched(1e-3, 3.0, 4, 1e-4);
  std::vector<double> lrs;
  for (int epoch = 1; epoch <= 12; ++epoch) lrs.push_back(sched.step(1.0));
  // Epoch 1 sets the best; epochs 2..5 fail to improve, so the rate drops after epoch 5.
  for (int e = 0; e < 4; ++e) CHECK(lrs[e] == 1e-3);
  CHECK(lrs[4] == doctest::Approx(1e-3 / 3));
  CHECK(lrs[8] == doctest::Approx(1e-4));
  CHECK(lrs[11] == doctest::Approx(1e-4));

  EarlyStopping stop(3);
  const std::vector<double> losses{1.0, 0.8, 0.7, 0.75, 0.7, 0.71, 0.6};
  int stopped_at = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    stop.update(static_cast<int>(i + 1), losses[i]);
    if (stop.should_stop()) {
      stopped_at = static_cast<int>(i + 1);
      break;
    }
  }
  CHECK(stopped_at == 6);
  CHECK(stop.best_epoch() == 3);
}

TEST_CASE("gradient check across layers and losses") {
  const auto report = gradient_check(1e-4, 100, 3);
  for (const auto& e : report.entries) {
    INFO(e.name);
    CHECK(e.max_relative_error < 1e-4);
  }
  CHECK(report.passed());
  CHECK(report.entries.size() == 10);
}

TEST_CASE("train config validation") {
  const auto grid = TrainConfig::learning_rate_grid();
  REQUIRE(grid.size() == 11);
  CHECK(grid.front() == doctest::Approx(0.1));
  CHECK(grid.back() == doctest::Approx(1e-6));
  TrainConfig cfg;
  cfg.learning_rate = std::pow(10.0, -2.5);
  CHECK_NOTHROW(cfg.validate(80));
  cfg.learning_rate = 2e-3;
  CHECK_THROWS_AS(cfg.validate(80), ConfigError);
  cfg.allow_override = true;
  CHECK_NOTHROW(cfg.validate(80));
  cfg.batch_size = 9;
  CHECK_THROWS_AS(cfg.validate(80), ConfigError);
  CHECK(TrainConfig::for_kind(NetKind::kCnn).lr_factor == 3.0);
  CHECK(TrainConfig::for_kind(NetKind::kCnn).early_stop_patience == 8);
  CHECK(TrainConfig::for_kind(NetKind::kMlp).early_stop_patience == 3);
  CHECK(TrainConfig::for_kind(NetKind::kTcnn).loss == LossKind::kTriplet);
  CHECK(TrainConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}

TEST_CASE("stratified split") {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c) labels.insert(labels.end(), 20, c);
  const auto [train, val] = stratified_split(labels, 0.1, 3);
  CHECK(train.size() == 72);
  CHECK(val.size() == 8);
  for (int c = 0; c < 4; ++c) CHECK(std::count_if(val.begin(), val.end(), [&](auto i) { return labels[i] == c; }) == 2);
  CHECK(stratified_split(labels, 0.1, 3) == stratified_split(labels, 0.1, 3));
}

TEST_CASE("mlp trains on separable clusters and restores the best epoch") {
  const auto ds = clusters(30, 8, 1);
  auto cfg = TrainConfig::for_kind(NetKind::kMlp);
  cfg.learning_rate = 1e-2;
  cfg.seed = 4;
  const auto net = train_network(NetworkConfig::mlp(8, 0), ds, cfg);
  CHECK(accuracy(net.predict(ds.inputs), ds.labels) > 0.95);
  REQUIRE(!net.history.empty());
  const auto best = std::min_element(net.history.begin(), net.history.end(),
                                     [](const auto& a, const auto& b) { return a.val_loss < b.val_loss; });
  CHECK(net.best_epoch == best->epoch);

  // Identical seeds give identical weights.
  const auto again = train_network(NetworkConfig::mlp(8, 0), ds, cfg);
  CHECK(again.network.to_json() == net.network.to_json());

  const auto path = testutil::temp_dir("nn_ckpt") / "mlp.json";
  net.save(path);
  const auto loaded = TrainedNetwork::load(path);
  CHECK(loaded.predict(ds.inputs) == net.predict(ds.inputs));
  CHECK(loaded.outputs(ds.inputs) == net.outputs(ds.inputs));
  net.write_history_csv(path.parent_path() / "history.csv");
  CHECK(std::filesystem::file_size(path.parent_path() / "history.csv") > 0);

  auto big_batch = cfg;
  big_batch.batch_size = 13;
  CHECK_THROWS_AS(train_network(NetworkConfig::mlp(8, 0), ds, big_batch), ConfigError);
}

TEST_CASE("cnn overfits a 40-clip synthetic set") {
  const auto specs = spectrogram_dataset(generate_synthetic(21, 10).train, 8);
  const auto ds = spectrogram_tensors(specs);
  REQUIRE(ds.size() == 40);
  auto cfg = TrainConfig::for_kind(NetKind::kCnn);
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.seed = 2;
  // Validating on the training clips keeps early stopping tied to the fit.
  const auto net = train_network(NetworkConfig::cnn(8, 2, 8, 1), ds, cfg, &ds);
  CHECK(net.history.size() <= 200);
  CHECK(accuracy(net.predict(ds.inputs), ds.labels) == 1.0);
}

TEST_CASE("slp separates separable embeddings") {
  const auto train = clusters(25, 16, 3);
  const auto test = clusters(10, 16, 4);
  auto cfg = TrainConfig::for_kind(NetKind::kSlp);
  cfg.learning_rate = 1e-2;
  const auto slp = train_network(NetworkConfig::slp(16), train, cfg);
  CHECK(accuracy(slp.predict(test.inputs), test.labels) == 1.0);
}

TEST_CASE("tcnn embeddings feed an slp") {
  const auto data = generate_synthetic(8, 15);
  const auto train = spectrogram_tensors(spectrogram_dataset(data.train, 8));
  const auto test = spectrogram_tensors(spectrogram_dataset(data.test, 8));
  auto cfg = TrainConfig::for_kind(NetKind::kTcnn);
  cfg.batch_size = 6;
  cfg.seed = 1;
  const auto tcnn = train_network(NetworkConfig::tcnn(8, 2, 8, 1, 16), train, cfg);
  CHECK(tcnn.outputs(test.inputs).shape() == Shape{test.size(), 16});
  CHECK_THROWS_AS(tcnn.predict(test.inputs), ContractError);

  auto slp_cfg = TrainConfig::for_kind(NetKind::kSlp);
  slp_cfg.batch_size = 6;
  const auto a = embed_and_classify(tcnn, train, test, slp_cfg);
  const auto b = embed_and_classify(tcnn, train, test, slp_cfg);
  CHECK(a.predictions == b.predictions);
  CHECK(a.predictions.size() == test.size());
  CHECK(accuracy(a.predictions, test.labels) > 0.5);

  auto odd = tcnn;
  odd.config.embedding_dim = 24;
  CHECK_THROWS_AS(embed_and_classify(odd, train, test, slp_cfg), ConfigError);
}
