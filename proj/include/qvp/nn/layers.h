#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvp/nn/tensor.h"
#include "qvp/random.h"

namespace qvp::nn {

enum class Mode { kTrain, kEval };

/// A trainable tensor and its gradient accumulator.
struct Param {
  Tensor* value;
  Tensor* grad;
};

/// One stage of a sequential network. forward() caches what backward()
/// needs; backward() must follow the matching forward() and returns the
/// gradient with respect to the layer input, accumulating parameter
/// gradients into the grad tensors.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<Param> params() { return {}; }
  /// Per-sample output shape for a per-sample input shape; throws
  /// ContractError on incompatible input.
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual std::string type() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual nlohmann::json to_json() const;
  /// Restores weights written by to_json into an identically shaped layer.
  virtual void load_json(const nlohmann::json& j);

  void zero_grad();

 protected:
  /// Named tensors serialized by the default to_json/load_json.
  virtual std::vector<std::pair<std::string, Tensor*>> state() { return {}; }
};

/// y = x W^T + b, x is [B, in].
class Dense : public Layer {
 public:
  Dense(std::size_t in, std::size_t out);

  /// He-normal weights, zero bias.
  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param> params() override { return {{&weight, &weight_grad}, {&bias, &bias_grad}}; }
  Shape output_shape(const Shape& input) const override;
  std::string type() const override { return "dense"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  nlohmann::json to_json() const override;

  std::size_t in_features, out_features;
  Tensor weight, bias, weight_grad, bias_grad;

 protected:
  std::vector<std::pair<std::string, Tensor*>> state() override { return {{"weight", &weight}, {"bias", &bias}}; }

 private:
  Tensor input_;
};

class Relu : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return input; }
  std::string type() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  Tensor input_;
};

/// 3x3 cross-correlation, stride 1, zero padding 1. x is [B, C, H, W].
class Conv2d : public Layer {
 public:
  static constexpr std::size_t kKernel = 3;

  Conv2d(std::size_t in_channels, std::size_t out_channels);
  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param> params() override { return {{&weight, &weight_grad}, {&bias, &bias_grad}}; }
  Shape output_shape(const Shape& input) const override;
  std::string type() const override { return "conv2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  nlohmann::json to_json() const override;

  std::size_t in_channels, out_channels;
  Tensor weight;  // [out, in, 3, 3]
  Tensor bias;    // [out]
  Tensor weight_grad, bias_grad;

 protected:
  std::vector<std::pair<std::string, Tensor*>> state() override { return {{"weight", &weight}, {"bias", &bias}}; }

 private:
  Shape input_shape_;
  std::vector<double> columns_;  // im2col patches per batch item: [B][in*9][H*W]
};

/// 2x2 window, stride 2, floor output size. Ties route to the first maximum.
class MaxPool2d : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override;
  std::string type() const override { return "maxpool2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

/// Per-channel normalization over (B, H, W). Train mode uses batch
/// statistics and updates running averages with momentum 0.1; eval mode uses
/// the running averages.
class BatchNorm2d : public Layer {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-8;

  explicit BatchNorm2d(std::size_t channels);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param> params() override { return {{&gamma, &gamma_grad}, {&beta, &beta_grad}}; }
  Shape output_shape(const Shape& input) const override;
  std::string type() const override { return "batchnorm2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  nlohmann::json to_json() const override;

  std::size_t channels;
  Tensor gamma, beta, gamma_grad, beta_grad;
  Tensor running_mean, running_var;

 protected:
  std::vector<std::pair<std::string, Tensor*>> state() override {
    return {{"gamma", &gamma}, {"beta", &beta}, {"running_mean", &running_mean}, {"running_var", &running_var}};
  }

 private:
  Mode last_mode_ = Mode::kEval;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

/// [B, ...] -> [B, prod(...)].
class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& input) const override { return {shape_size(input)}; }
  std::string type() const override { return "flatten"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  Shape input_shape_;
};

/// Constructs an untrained layer from the "type" field of a serialized layer.
std::unique_ptr<Layer> layer_from_json(const nlohmann::json& j);

}  // namespace qvp::nn
