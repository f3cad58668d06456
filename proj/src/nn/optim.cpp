#include "qvp/nn/optim.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qvp/error.h"

namespace qvp::nn {

void Adam::step(const std::vector<Param>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value->size(), 0.0);
      v_.emplace_back(p.value->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam::step: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value->values();
    const auto& g = params[i].grad->values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon_);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, double min_lr)
    : lr_(lr), factor_(factor), min_lr_(min_lr), patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (factor <= 1.0) throw ConfigError("scheduler factor must exceed 1");
  if (patience < 1) throw ConfigError("scheduler patience must be >= 1");
}

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    wait_ = 0;
  } else if (++wait_ >= patience_) {
    lr_ = std::max(lr_ / factor_, min_lr_);
    wait_ = 0;
  }
  return lr_;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("early-stop patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch;
    wait_ = 0;
    return true;
  }
  ++wait_;
  return false;
}

}  // namespace qvp::nn
