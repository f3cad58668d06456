#include "qvp/nn/network.h"

#include <algorithm>
#include <set>

#include "qvp/audio.h"
#include "qvp/error.h"

namespace qvp::nn {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

bool contains(std::initializer_list<std::size_t> set, std::size_t v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

}  // namespace

std::string kind_name(NetKind kind) {
  switch (kind) {
    case NetKind::kMlp: return "mlp";
    case NetKind::kCnn: return "cnn";
    case NetKind::kTcnn: return "tcnn";
    case NetKind::kSlp: return "slp";
  }
  return "?";
}

NetKind kind_from_name(const std::string& name) {
  for (NetKind k : {NetKind::kMlp, NetKind::kCnn, NetKind::kTcnn, NetKind::kSlp}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown network kind '" + name + "'");
}

std::vector<std::vector<std::size_t>> NetworkConfig::mlp_hidden_options(std::size_t n) {
  return {{ceil_div(n, 2)}, {ceil_div(n, 2), ceil_div(n, 4)}, {ceil_div(n, 4)}};
}

NetworkConfig NetworkConfig::mlp(std::size_t n_inputs, std::size_t variant) {
  const auto options = mlp_hidden_options(n_inputs);
  if (variant >= options.size()) throw ConfigError("mlp architecture variant must be 0, 1 or 2");
  NetworkConfig c;
  c.kind = NetKind::kMlp;
  c.n_inputs = n_inputs;
  c.hidden = options[variant];
  return c;
}

NetworkConfig NetworkConfig::cnn(std::size_t side, std::size_t conv_layers, std::size_t filters,
                                 std::size_t pools) {
  NetworkConfig c;
  c.kind = NetKind::kCnn;
  c.image_side = side;
  c.conv_layers = conv_layers;
  c.filters = filters;
  c.pools = pools;
  return c;
}

NetworkConfig NetworkConfig::tcnn(std::size_t side, std::size_t conv_layers, std::size_t filters,
                                  std::size_t pools, std::size_t embedding_dim) {
  NetworkConfig c = cnn(side, conv_layers, filters, pools);
  c.kind = NetKind::kTcnn;
  c.embedding_dim = embedding_dim;
  return c;
}

NetworkConfig NetworkConfig::slp(std::size_t n_inputs) {
  NetworkConfig c;
  c.kind = NetKind::kSlp;
  c.n_inputs = n_inputs;
  return c;
}

void NetworkConfig::validate() const {
  if (kind == NetKind::kMlp || kind == NetKind::kSlp) {
    if (n_inputs == 0) throw ConfigError("network: n_inputs must be positive");
    if (std::find(hidden.begin(), hidden.end(), 0u) != hidden.end()) {
      throw ConfigError("network: hidden layer sizes must be positive");
    }
    if (kind == NetKind::kSlp && !hidden.empty()) throw ConfigError("network: slp has no hidden layers");
    if (kind == NetKind::kMlp && !allow_override) {
      const auto options = mlp_hidden_options(n_inputs);
      if (std::find(options.begin(), options.end(), hidden) == options.end()) {
        throw ConfigError("network: mlp hidden sizes must follow one of the ceil(n/2), ceil(n/4) variants");
      }
    }
    return;
  }
  if (conv_layers == 0 || filters == 0 || pools == 0 || image_side == 0) {
    throw ConfigError("network: conv_layers, filters, pools and image side must be positive");
  }
  std::size_t side = image_side;
  for (std::size_t i = 0; i < pools; ++i) {
    if (side < 2) {
      throw ConfigError("network: " + std::to_string(pools) + " pooling layers do not fit a " +
                        std::to_string(image_side) + "x" + std::to_string(image_side) + " input");
    }
    side /= 2;
  }
  if (!allow_override) {
    if (!contains({8, 12, 16}, image_side)) throw ConfigError("network: image side must be 8, 12 or 16");
    if (!contains({2, 4, 6}, conv_layers)) throw ConfigError("network: conv_layers must be 2, 4 or 6");
    if (!contains({8, 16, 32, 64}, filters)) throw ConfigError("network: filters must be 8, 16, 32 or 64");
    if (!contains({1, 2, 3}, pools)) throw ConfigError("network: pools must be 1, 2 or 3");
    if (kind == NetKind::kTcnn && !contains({16, 32}, embedding_dim)) {
      throw ConfigError("network: embedding_dim must be 16 or 32");
    }
  }
  if (kind == NetKind::kTcnn && embedding_dim == 0) throw ConfigError("network: embedding_dim must be positive");
}

Shape NetworkConfig::input_shape() const {
  if (kind == NetKind::kMlp || kind == NetKind::kSlp) return {n_inputs};
  return {1, image_side, image_side};
}

std::size_t NetworkConfig::output_size() const {
  return kind == NetKind::kTcnn ? embedding_dim : static_cast<std::size_t>(kNumClasses);
}

std::string NetworkConfig::describe() const {
  std::string s = kind_name(kind);
  if (kind == NetKind::kMlp) {
    s += " hidden=";
    for (std::size_t i = 0; i < hidden.size(); ++i) s += (i ? "-" : "") + std::to_string(hidden[i]);
  } else if (kind == NetKind::kCnn || kind == NetKind::kTcnn) {
    s += " conv=" + std::to_string(conv_layers) + " filters=" + std::to_string(filters) +
         " pools=" + std::to_string(pools);
    if (kind == NetKind::kTcnn) s += " emb=" + std::to_string(embedding_dim);
  }
  return s;
}

nlohmann::json NetworkConfig::to_json() const {
  return {{"kind", kind_name(kind)},         {"n_inputs", n_inputs}, {"hidden", hidden},
          {"image_side", image_side},        {"conv_layers", conv_layers}, {"filters", filters},
          {"pools", pools},                  {"embedding_dim", embedding_dim},
          {"allow_override", allow_override}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.kind = kind_from_name(j.at("kind").get<std::string>());
  c.n_inputs = j.value("n_inputs", std::size_t{0});
  c.hidden = j.value("hidden", std::vector<std::size_t>{});
  c.image_side = j.value("image_side", std::size_t{0});
  c.conv_layers = j.value("conv_layers", std::size_t{2});
  c.filters = j.value("filters", std::size_t{8});
  c.pools = j.value("pools", std::size_t{1});
  c.embedding_dim = j.value("embedding_dim", std::size_t{16});
  c.allow_override = j.value("allow_override", false);
  return c;
}

std::vector<std::size_t> pool_positions(std::size_t conv_layers, std::size_t pools) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i <= pools; ++i) out.push_back(ceil_div(conv_layers * i, pools));
  return out;
}

Network::Network(const Network& other) : input_shape_(other.input_shape_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Shape Network::output_shape() const {
  Shape s = input_shape_;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

void Network::add(std::unique_ptr<Layer> layer) {
  const Shape in = output_shape();
  try {
    (void)layer->output_shape(in);
  } catch (const ContractError& e) {
    throw ContractError("layer " + std::to_string(layers_.size()) + " (" + layer->type() + "): " + e.what());
  }
  layers_.push_back(std::move(layer));
}

Tensor Network::forward(const Tensor& x, Mode mode) {
  Shape per(x.shape().begin() + (x.rank() ? 1 : 0), x.shape().end());
  if (x.rank() == 0 || per != input_shape_) {
    throw ContractError("network input: expected [B, " + shape_string(input_shape_).substr(1) + ", got " +
                        shape_string(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      h = layers_[i]->forward(h, mode);
    } catch (const ContractError& e) {
      throw ContractError("layer " + std::to_string(i) + " (" + layers_[i]->type() + "): " + e.what());
    }
  }
  return h;
}

Tensor Network::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    try {
      g = layers_[i]->backward(g);
    } catch (const ContractError& e) {
      throw ContractError("layer " + std::to_string(i) + " (" + layers_[i]->type() + "): " + e.what());
    }
  }
  return g;
}

std::vector<Param> Network::params() {
  std::vector<Param> out;
  for (auto& l : layers_) {
    for (const auto& p : l->params()) out.push_back(p);
  }
  return out;
}

void Network::zero_grad() {
  for (auto& l : layers_) l->zero_grad();
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : const_cast<Network*>(this)->params()) n += p.value->size();
  return n;
}

nlohmann::json Network::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(l->to_json());
  return {{"input_shape", input_shape_}, {"layers", layers}};
}

Network Network::from_json(const nlohmann::json& j) {
  Network net(j.at("input_shape").get<Shape>());
  for (const auto& l : j.at("layers")) net.add(layer_from_json(l));
  return net;
}

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, 0);
  Network net(config.input_shape());
  if (config.kind == NetKind::kMlp || config.kind == NetKind::kSlp) {
    std::size_t in = config.n_inputs;
    for (std::size_t h : config.hidden) {
      auto dense = std::make_unique<Dense>(in, h);
      dense->init(rng);
      net.add(std::move(dense));
      net.add(std::make_unique<Relu>());
      in = h;
    }
    auto out = std::make_unique<Dense>(in, config.output_size());
    out->init(rng);
    net.add(std::move(out));
    return net;
  }
  const auto positions = pool_positions(config.conv_layers, config.pools);
  std::size_t channels = 1;
  for (std::size_t c = 1; c <= config.conv_layers; ++c) {
    auto conv = std::make_unique<Conv2d>(channels, config.filters);
    conv->init(rng);
    net.add(std::move(conv));
    net.add(std::make_unique<BatchNorm2d>(config.filters));
    net.add(std::make_unique<Relu>());
    channels = config.filters;
    for (std::size_t p : positions) {
      if (p == c) net.add(std::make_unique<MaxPool2d>());
    }
  }
  net.add(std::make_unique<Flatten>());
  auto out = std::make_unique<Dense>(net.output_shape()[0], config.output_size());
  out->init(rng);
  net.add(std::move(out));
  return net;
}

}  // namespace qvp::nn
