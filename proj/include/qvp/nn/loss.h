#pragma once

#include <span>
#include <vector>

#include "qvp/nn/tensor.h"
#include "qvp/random.h"

namespace qvp::nn {

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // gradient of the loss with respect to the loss input
};

/// Row-wise softmax of [B, K] logits.
Tensor softmax(const Tensor& logits);

/// Mean negative log-likelihood of softmax(logits); gradient (softmax - onehot) / B.
LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

/// max(d(a,p) - d(a,n) + margin, 0) with Euclidean d.
double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                    double margin);

struct Triplet {
  std::size_t anchor, positive, negative;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

enum class TripletStrategy { kRandomNegative, kHardestNegative };

/// For every ordered (anchor, positive) pair of equal label: random negative
/// draws uniformly among negatives with positive loss (the pair is skipped
/// when there are none); hardest negative takes the nearest negative, lowest
/// index on ties. Empty when fewer than two classes are present.
std::vector<Triplet> mine_triplets(const Tensor& embeddings, std::span<const int> labels,
                                   TripletStrategy strategy, double margin, Rng& rng);

/// Mean triplet loss over the selected triplets and its gradient with respect
/// to the [B, E] embeddings. The subgradient at zero distance or at the hinge is 0.
LossResult batch_triplet_loss(const Tensor& embeddings, std::span<const Triplet> triplets, double margin);

}  // namespace qvp::nn
