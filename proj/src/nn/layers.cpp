#include "qvp/nn/layers.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "qvp/error.h"

namespace qvp::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMatrix>;
using MapRC = Eigen::Map<const RowMatrix>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ContractError(message);
}

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.values()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

void he_normal(Tensor& w, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& v : w.values()) v = dist(rng);
}

}  // namespace

nlohmann::json Layer::to_json() const {
  nlohmann::json j{{"type", type()}};
  for (const auto& [name, tensor] : const_cast<Layer*>(this)->state()) j[name] = tensor_json(*tensor);
  return j;
}

void Layer::load_json(const nlohmann::json& j) {
  if (j.at("type").get<std::string>() != type()) {
    throw DataError("checkpoint layer type " + j.at("type").get<std::string>() + " does not match " + type());
  }
  for (const auto& [name, tensor] : state()) {
    Tensor loaded = tensor_from_json(j.at(name));
    if (loaded.shape() != tensor->shape()) {
      throw DataError("checkpoint tensor " + name + " has shape " + shape_string(loaded.shape()) + ", expected " +
                      shape_string(tensor->shape()));
    }
    *tensor = std::move(loaded);
  }
}

void Layer::zero_grad() {
  for (auto& p : params()) p.grad->fill(0.0);
}

// Dense

Dense::Dense(std::size_t in, std::size_t out)
    : in_features(in),
      out_features(out),
      weight({out, in}),
      bias({out}),
      weight_grad({out, in}),
      bias_grad({out}) {
  require(in > 0 && out > 0, "Dense: sizes must be positive");
}

void Dense::init(Rng& rng) {
  he_normal(weight, in_features, rng);
  bias.fill(0.0);
}

Shape Dense::output_shape(const Shape& input) const {
  require(input.size() == 1 && input[0] == in_features,
          "dense expects [" + std::to_string(in_features) + "], got " + shape_string(input));
  return {out_features};
}

Tensor Dense::forward(const Tensor& x, Mode) {
  require(x.rank() == 2 && x.dim(1) == in_features,
          "dense expects [B, " + std::to_string(in_features) + "], got " + shape_string(x.shape()));
  input_ = x;
  const std::size_t b = x.dim(0);
  Tensor y({b, out_features});
  MapR Y(y.data(), b, out_features);
  Y.noalias() = MapRC(x.data(), b, in_features) * MapRC(weight.data(), out_features, in_features).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), out_features);
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  const std::size_t b = input_.dim(0);
  require(grad_out.shape() == Shape{b, out_features}, "dense backward: gradient shape mismatch");
  MapRC G(grad_out.data(), b, out_features);
  MapRC X(input_.data(), b, in_features);
  MapR(weight_grad.data(), out_features, in_features).noalias() += G.transpose() * X;
  Eigen::Map<Eigen::RowVectorXd>(bias_grad.data(), out_features) += G.colwise().sum();
  Tensor dx({b, in_features});
  MapR(dx.data(), b, in_features).noalias() = G * MapRC(weight.data(), out_features, in_features);
  return dx;
}

nlohmann::json Dense::to_json() const {
  auto j = Layer::to_json();
  j["in"] = in_features;
  j["out"] = out_features;
  return j;
}

// Relu

Tensor Relu::forward(const Tensor& x, Mode) {
  input_ = x;
  Tensor y = x;
  for (double& v : y.values()) v = std::max(v, 0.0);
  return y;
}

Tensor Relu::backward(const Tensor& grad_out) {
  require(grad_out.shape() == input_.shape(), "relu backward: gradient shape mismatch");
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(input_[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

// Conv2d

Conv2d::Conv2d(std::size_t in, std::size_t out)
    : in_channels(in),
      out_channels(out),
      weight({out, in, kKernel, kKernel}),
      bias({out}),
      weight_grad({out, in, kKernel, kKernel}),
      bias_grad({out}) {
  require(in > 0 && out > 0, "Conv2d: channel counts must be positive");
}

void Conv2d::init(Rng& rng) {
  he_normal(weight, in_channels * kKernel * kKernel, rng);
  bias.fill(0.0);
}

Shape Conv2d::output_shape(const Shape& input) const {
  require(input.size() == 3 && input[0] == in_channels,
          "conv2d expects [" + std::to_string(in_channels) + ", H, W], got " + shape_string(input));
  return {out_channels, input[1], input[2]};
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  require(x.rank() == 4 && x.dim(1) == in_channels,
          "conv2d expects [B, " + std::to_string(in_channels) + ", H, W], got " + shape_string(x.shape()));
  input_shape_ = x.shape();
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
  const std::size_t k = in_channels * kKernel * kKernel;
  columns_.assign(b * k * hw, 0.0);
  for (std::size_t n = 0; n < b; ++n) {
    double* cols = columns_.data() + n * k * hw;
    for (std::size_t c = 0; c < in_channels; ++c) {
      const double* plane = x.data() + (n * in_channels + c) * hw;
      for (std::size_t ky = 0; ky < kKernel; ++ky) {
        for (std::size_t kx = 0; kx < kKernel; ++kx) {
          double* row = cols + ((c * kKernel + ky) * kKernel + kx) * hw;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t xx = 0; xx < w; ++xx) {
              const long sx = static_cast<long>(xx + kx) - 1;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              row[y * w + xx] = plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
            }
          }
        }
      }
    }
  }
  Tensor out({b, out_channels, h, w});
  MapRC W(weight.data(), out_channels, k);
  for (std::size_t n = 0; n < b; ++n) {
    MapR O(out.data() + n * out_channels * hw, out_channels, hw);
    O.noalias() = W * MapRC(columns_.data() + n * k * hw, k, hw);
    O.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), out_channels);
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const std::size_t b = input_shape_[0], h = input_shape_[2], w = input_shape_[3], hw = h * w;
  require(grad_out.shape() == Shape{b, out_channels, h, w}, "conv2d backward: gradient shape mismatch");
  const std::size_t k = in_channels * kKernel * kKernel;
  MapRC W(weight.data(), out_channels, k);
  MapR dW(weight_grad.data(), out_channels, k);
  Eigen::Map<Eigen::VectorXd> db(bias_grad.data(), out_channels);
  Tensor dx(input_shape_);
  RowMatrix dcols(k, hw);
  for (std::size_t n = 0; n < b; ++n) {
    MapRC G(grad_out.data() + n * out_channels * hw, out_channels, hw);
    MapRC cols(columns_.data() + n * k * hw, k, hw);
    dW.noalias() += G * cols.transpose();
    db += G.rowwise().sum();
    dcols.noalias() = W.transpose() * G;
    for (std::size_t c = 0; c < in_channels; ++c) {
      double* plane = dx.data() + (n * in_channels + c) * hw;
      for (std::size_t ky = 0; ky < kKernel; ++ky) {
        for (std::size_t kx = 0; kx < kKernel; ++kx) {
          const double* row = dcols.data() + ((c * kKernel + ky) * kKernel + kx) * hw;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t xx = 0; xx < w; ++xx) {
              const long sx = static_cast<long>(xx + kx) - 1;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] += row[y * w + xx];
            }
          }
        }
      }
    }
  }
  return dx;
}

nlohmann::json Conv2d::to_json() const {
  auto j = Layer::to_json();
  j["in"] = in_channels;
  j["out"] = out_channels;
  return j;
}

// MaxPool2d

Shape MaxPool2d::output_shape(const Shape& input) const {
  require(input.size() == 3 && input[1] >= 2 && input[2] >= 2,
          "maxpool2d expects [C, H>=2, W>=2], got " + shape_string(input));
  return {input[0], input[1] / 2, input[2] / 2};
}

Tensor MaxPool2d::forward(const Tensor& x, Mode) {
  require(x.rank() == 4, "maxpool2d expects [B, C, H, W], got " + shape_string(x.shape()));
  const Shape per = output_shape({x.dim(1), x.dim(2), x.dim(3)});
  input_shape_ = x.shape();
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = per[1], ow = per[2];
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  argmax_.assign(out.size(), 0);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = p * h * w + 2 * y * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * h * w + (2 * y + dy) * w + 2 * xx + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = x[best];
        argmax_[o] = best;
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  require(grad_out.size() == argmax_.size(), "maxpool2d backward: gradient shape mismatch");
  Tensor dx(input_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += grad_out[o];
  return dx;
}

// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::size_t c)
    : channels(c),
      gamma({c}, 1.0),
      beta({c}, 0.0),
      gamma_grad({c}),
      beta_grad({c}),
      running_mean({c}, 0.0),
      running_var({c}, 1.0) {
  require(c > 0, "BatchNorm2d: channel count must be positive");
}

Shape BatchNorm2d::output_shape(const Shape& input) const {
  require(input.size() == 3 && input[0] == channels,
          "batchnorm2d expects [" + std::to_string(channels) + ", H, W], got " + shape_string(input));
  return input;
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  require(x.rank() == 4 && x.dim(1) == channels,
          "batchnorm2d expects [B, " + std::to_string(channels) + ", H, W], got " + shape_string(x.shape()));
  const std::size_t b = x.dim(0), hw = x.dim(2) * x.dim(3), m = b * hw;
  last_mode_ = mode;
  normalized_ = Tensor(x.shape());
  inv_std_.assign(channels, 0.0);
  Tensor y(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        const double* p = x.data() + (n * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        const double* p = x.data() + (n * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<double>(m);
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      running_mean[c] = (1.0 - kMomentum) * running_mean[c] + kMomentum * mean;
      running_var[c] = (1.0 - kMomentum) * running_var[c] + kMomentum * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[c] = inv;
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t off = (n * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (x[off + i] - mean) * inv;
        normalized_[off + i] = xh;
        y[off + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  require(grad_out.shape() == normalized_.shape(), "batchnorm2d backward: gradient shape mismatch");
  const std::size_t b = grad_out.dim(0), hw = grad_out.dim(2) * grad_out.dim(3);
  const double m = static_cast<double>(b * hw);
  Tensor dx(grad_out.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t off = (n * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += grad_out[off + i] * normalized_[off + i];
      }
    }
    gamma_grad[c] += sum_gx;
    beta_grad[c] += sum_g;
    const double scale = gamma[c] * inv_std_[c];
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t off = (n * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        if (last_mode_ == Mode::kTrain) {
          dx[off + i] = scale * (grad_out[off + i] - sum_g / m - normalized_[off + i] * sum_gx / m);
        } else {
          dx[off + i] = scale * grad_out[off + i];
        }
      }
    }
  }
  return dx;
}

nlohmann::json BatchNorm2d::to_json() const {
  auto j = Layer::to_json();
  j["channels"] = channels;
  return j;
}

// Flatten

Tensor Flatten::forward(const Tensor& x, Mode) {
  require(x.rank() >= 1, "flatten: empty shape");
  input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.row_size()});
}

Tensor Flatten::backward(const Tensor& grad_out) { return grad_out.reshaped(input_shape_); }

std::unique_ptr<Layer> layer_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  std::unique_ptr<Layer> layer;
  if (type == "dense") {
    layer = std::make_unique<Dense>(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
  } else if (type == "conv2d") {
    layer = std::make_unique<Conv2d>(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
  } else if (type == "batchnorm2d") {
    layer = std::make_unique<BatchNorm2d>(j.at("channels").get<std::size_t>());
  } else if (type == "maxpool2d") {
    layer = std::make_unique<MaxPool2d>();
  } else if (type == "relu") {
    layer = std::make_unique<Relu>();
  } else if (type == "flatten") {
    layer = std::make_unique<Flatten>();
  } else {
    throw DataError("unknown layer type '" + type + "'");
  }
  layer->load_json(j);
  return layer;
}

}  // namespace qvp::nn
