#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qvp/nn/layers.h"

namespace qvp::nn {

/// Relative error ||a - n|| / (||a|| + ||n||) between analytic and numeric gradients.
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

/// Compares a layer's input and parameter gradients against central finite
/// differences (step h) of L = sum(g * forward(x)) for a random g.
double check_layer_gradients(Layer& layer, const Tensor& input, Mode mode, Rng& rng, double h = 1e-5);

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double max_relative_error() const;
};

/// Runs every layer type and both losses on random small tensors for `trials` draws.
GradCheckReport gradient_check(double tolerance = 1e-4, int trials = 10, std::uint64_t seed = 0);

}  // namespace qvp::nn
