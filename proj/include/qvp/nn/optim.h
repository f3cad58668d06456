#pragma once

#include <vector>

#include "qvp/nn/layers.h"

namespace qvp::nn {

/// Bias-corrected Adam with per-parameter moment buffers.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  /// Updates every value in `params` from its grad. The parameter list must
  /// keep the same order and shapes between calls.
  void step(const std::vector<Param>& params, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Divides the learning rate by `factor` once validation loss has failed to
/// improve for `patience` consecutive epochs, never going below `min_lr`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_lr);
  /// Records one epoch's validation loss and returns the learning rate for the next epoch.
  double step(double val_loss);
  double lr() const { return lr_; }

 private:
  double lr_, factor_, min_lr_;
  int patience_, wait_ = 0;
  double best_;
};

/// Stops after `patience` consecutive epochs without strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records epoch `epoch`; returns true when it is a new best.
  bool update(int epoch, double val_loss);
  bool should_stop() const { return wait_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_, wait_ = 0, best_epoch_ = 0;
  double best_;
};

}  // namespace qvp::nn
