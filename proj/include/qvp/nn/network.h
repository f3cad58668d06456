#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvp/nn/layers.h"

namespace qvp::nn {

enum class NetKind { kMlp, kCnn, kTcnn, kSlp };

std::string kind_name(NetKind kind);
NetKind kind_from_name(const std::string& name);

/// Architecture description. MLP and SLP read n_inputs; CNN and TCNN read
/// image_side, conv_layers, filters and pools. TCNN outputs an embedding of
/// embedding_dim values, every other kind outputs four class logits.
struct NetworkConfig {
  NetKind kind = NetKind::kMlp;
  std::size_t n_inputs = 0;
  std::vector<std::size_t> hidden;
  std::size_t image_side = 0;
  std::size_t conv_layers = 2;
  std::size_t filters = 8;
  std::size_t pools = 1;
  std::size_t embedding_dim = 16;
  bool allow_override = false;

  /// Hidden-layer variants for n inputs: [ceil(n/2)], [ceil(n/2), ceil(n/4)], [ceil(n/4)].
  static std::vector<std::vector<std::size_t>> mlp_hidden_options(std::size_t n_inputs);

  static NetworkConfig mlp(std::size_t n_inputs, std::size_t variant);
  static NetworkConfig cnn(std::size_t side, std::size_t conv_layers, std::size_t filters, std::size_t pools);
  static NetworkConfig tcnn(std::size_t side, std::size_t conv_layers, std::size_t filters, std::size_t pools,
                            std::size_t embedding_dim);
  static NetworkConfig slp(std::size_t n_inputs);

  /// Throws ConfigError for values outside the supported sets unless
  /// allow_override is set; structural impossibilities always throw.
  void validate() const;

  Shape input_shape() const;
  std::size_t output_size() const;
  std::string describe() const;

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

/// 1-based conv indices after which a 2x2 pool follows: ceil(c*i/p) for
/// i = 1..p. Repeated entries stack pools.
std::vector<std::size_t> pool_positions(std::size_t conv_layers, std::size_t pools);

/// Sequential stack of layers. Copies are deep.
class Network {
 public:
  Network() = default;
  explicit Network(Shape input_shape) : input_shape_(std::move(input_shape)) {}
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  /// Appends a layer; throws ContractError if it cannot accept the current output.
  void add(std::unique_ptr<Layer> layer);

  /// x is [B, input_shape...]. Shape errors name the failing layer index.
  Tensor forward(const Tensor& x, Mode mode);
  /// Backpropagates through the most recent forward pass.
  Tensor backward(const Tensor& grad_out);

  std::vector<Param> params();
  void zero_grad();
  std::size_t parameter_count() const;

  const Shape& input_shape() const { return input_shape_; }
  Shape output_shape() const;
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);

 private:
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Builds the layer stack for a config with He-initialized weights drawn from `seed`.
/// Hidden dense layers are followed by ReLU; every conv by batch norm then ReLU.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

}  // namespace qvp::nn
