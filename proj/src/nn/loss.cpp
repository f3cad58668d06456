#include "qvp/nn/loss.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qvp/audio.h"
#include "qvp/error.h"

namespace qvp::nn {

namespace {

double distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ContractError("softmax expects [B, K], got " + shape_string(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.data() + i * k;
    const double peak = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += p[i * k + j] = std::exp(row[j] - peak);
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= sum;
  }
  return p;
}

LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ContractError("cross_entropy_loss: logits " + shape_string(logits.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  LossResult r;
  r.grad = softmax(logits);
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k || y >= kNumClasses) {
      throw ContractError("cross_entropy_loss: label " + std::to_string(y) + " outside 0..3");
    }
    // log-softmax evaluated directly keeps huge margins finite.
    const double* row = logits.data() + i * k;
    const double peak = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - peak);
    r.loss += -(row[y] - peak - std::log(sum));
    r.grad[i * k + static_cast<std::size_t>(y)] -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  r.loss *= inv_b;
  for (double& g : r.grad.values()) g *= inv_b;
  return r;
}

double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                    double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ContractError("triplet_loss: dimension mismatch");
  return std::max(distance(a.data(), p.data(), a.size()) - distance(a.data(), n.data(), a.size()) + margin, 0.0);
}

std::vector<Triplet> mine_triplets(const Tensor& embeddings, std::span<const int> labels,
                                   TripletStrategy strategy, double margin, Rng& rng) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw ContractError("mine_triplets: embeddings " + shape_string(embeddings.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = labels.size(), e = embeddings.dim(1);
  std::vector<Triplet> out;
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end()) return out;

  std::vector<double> d(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      d[i * b + j] = d[j * b + i] = distance(embeddings.data() + i * e, embeddings.data() + j * e, e);
    }
  }
  std::vector<std::size_t> candidates;
  for (std::size_t a = 0; a < b; ++a) {
    for (std::size_t p = 0; p < b; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      if (strategy == TripletStrategy::kHardestNegative) {
        std::size_t best = b;
        for (std::size_t n = 0; n < b; ++n) {
          if (labels[n] == labels[a]) continue;
          if (best == b || d[a * b + n] < d[a * b + best]) best = n;
        }
        if (best < b) out.push_back({a, p, best});
      } else {
        candidates.clear();
        for (std::size_t n = 0; n < b; ++n) {
          if (labels[n] != labels[a] && d[a * b + p] - d[a * b + n] + margin > 0.0) candidates.push_back(n);
        }
        if (candidates.empty()) continue;
        const auto pick = std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng);
        out.push_back({a, p, candidates[pick]});
      }
    }
  }
  return out;
}

LossResult batch_triplet_loss(const Tensor& embeddings, std::span<const Triplet> triplets, double margin) {
  if (embeddings.rank() != 2) throw ContractError("batch_triplet_loss expects [B, E]");
  const std::size_t b = embeddings.dim(0), e = embeddings.dim(1);
  LossResult r;
  r.grad = Tensor(embeddings.shape());
  if (triplets.empty()) return r;
  const double inv = 1.0 / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    if (t.anchor >= b || t.positive >= b || t.negative >= b) throw ContractError("batch_triplet_loss: index out of range");
    const double* a = embeddings.data() + t.anchor * e;
    const double* p = embeddings.data() + t.positive * e;
    const double* n = embeddings.data() + t.negative * e;
    const double dap = distance(a, p, e), dan = distance(a, n, e);
    const double loss = dap - dan + margin;
    if (!(loss > 0.0)) continue;
    r.loss += loss * inv;
    double* ga = r.grad.data() + t.anchor * e;
    double* gp = r.grad.data() + t.positive * e;
    double* gn = r.grad.data() + t.negative * e;
    for (std::size_t k = 0; k < e; ++k) {
      if (dap > 0.0) {
        const double u = (a[k] - p[k]) / dap * inv;
        ga[k] += u;
        gp[k] -= u;
      }
      if (dan > 0.0) {
        const double v = (a[k] - n[k]) / dan * inv;
        ga[k] -= v;
        gn[k] += v;
      }
    }
  }
  return r;
}

}  // namespace qvp::nn
