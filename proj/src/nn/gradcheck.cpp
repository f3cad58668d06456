#include "qvp/nn/gradcheck.h"

#include <algorithm>
#include <cmath>

#include "qvp/nn/loss.h"

namespace qvp::nn {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double min_abs = 0.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : t.values()) {
    do {
      v = dist(rng);
    } while (std::abs(v) < min_abs);
  }
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * g[i];
  return s;
}

template <typename F>
std::vector<double> numeric_gradient(std::vector<double>& values, double h, F&& objective) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double plus = objective();
    values[i] = saved - h;
    const double minus = objective();
    values[i] = saved;
    out[i] = (plus - minus) / (2.0 * h);
  }
  return out;
}

}  // namespace

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom > 0.0 ? std::sqrt(diff) / denom : 0.0;
}

double check_layer_gradients(Layer& layer, const Tensor& input, Mode mode, Rng& rng, double h) {
  Tensor x = input;
  layer.zero_grad();
  const Tensor y = layer.forward(x, mode);
  const Tensor g = random_tensor(y.shape(), rng);
  const Tensor dx = layer.backward(g);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : layer.params()) analytic.push_back(p.grad->values());

  auto objective = [&] { return weighted_sum(layer.forward(x, mode), g); };
  double worst = relative_error(dx.values(), numeric_gradient(x.values(), h, objective));
  const auto params = layer.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric_gradient(params[i].value->values(), h, objective)));
  }
  return worst;
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_relative_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_relative_error);
  return m;
}

GradCheckReport gradient_check(double tolerance, int trials, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  const double h = 1e-5;
  GradCheckReport report;
  auto record = [&](const std::string& name, auto&& one_trial) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) worst = std::max(worst, one_trial());
    report.entries.push_back({name, worst, worst < tolerance});
  };

  record("dense 5->3 batch 2", [&] {
    Dense d(5, 3);
    d.init(rng);
    for (double& b : d.bias.values()) b = random_tensor({1}, rng)[0];
    return check_layer_gradients(d, random_tensor({2, 5}, rng), Mode::kTrain, rng, h);
  });
  record("relu", [&] {
    Relu r;
    return check_layer_gradients(r, random_tensor({3, 7}, rng, 0.1), Mode::kTrain, rng, h);
  });
  record("conv2d 1->1 4x4", [&] {
    Conv2d c(1, 1);
    c.init(rng);
    c.bias[0] = 0.3;
    return check_layer_gradients(c, random_tensor({1, 1, 4, 4}, rng), Mode::kTrain, rng, h);
  });
  record("conv2d 2->3 5x5 batch 2", [&] {
    Conv2d c(2, 3);
    c.init(rng);
    return check_layer_gradients(c, random_tensor({2, 2, 5, 5}, rng), Mode::kTrain, rng, h);
  });
  record("maxpool2d", [&] {
    MaxPool2d p;
    return check_layer_gradients(p, random_tensor({2, 2, 5, 4}, rng), Mode::kTrain, rng, h);
  });
  record("batchnorm2d train batch 8", [&] {
    BatchNorm2d bn(2);
    bn.gamma = random_tensor({2}, rng);
    bn.beta = random_tensor({2}, rng);
    return check_layer_gradients(bn, random_tensor({8, 2, 3, 3}, rng), Mode::kTrain, rng, h);
  });
  record("batchnorm2d eval", [&] {
    BatchNorm2d bn(2);
    bn.gamma = random_tensor({2}, rng);
    bn.running_mean = random_tensor({2}, rng);
    for (std::size_t c = 0; c < 2; ++c) bn.running_var[c] = 0.5 + std::abs(random_tensor({1}, rng)[0]);
    return check_layer_gradients(bn, random_tensor({4, 2, 3, 3}, rng), Mode::kEval, rng, h);
  });
  record("flatten", [&] {
    Flatten f;
    return check_layer_gradients(f, random_tensor({2, 3, 2, 2}, rng), Mode::kTrain, rng, h);
  });
  record("cross_entropy 4x4", [&] {
    Tensor logits = random_tensor({4, 4}, rng);
    std::vector<int> labels(4);
    for (int& y : labels) y = static_cast<int>(uniform_int(rng, 0, 3));
    const auto analytic = cross_entropy_loss(logits, labels).grad.values();
    const auto numeric =
        numeric_gradient(logits.values(), h, [&] { return cross_entropy_loss(logits, labels).loss; });
    return relative_error(analytic, numeric);
  });
  record("triplet", [&] {
    Tensor emb = random_tensor({6, 3}, rng);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const double margin = 0.5;
    const auto triplets = mine_triplets(emb, labels, TripletStrategy::kHardestNegative, margin, rng);
    const auto analytic = batch_triplet_loss(emb, triplets, margin).grad.values();
    const auto numeric =
        numeric_gradient(emb.values(), h, [&] { return batch_triplet_loss(emb, triplets, margin).loss; });
    return relative_error(analytic, numeric);
  });
  return report;
}

}  // namespace qvp::nn
