#pragma once

#include <map>
#include <string>

#include "stprog/model.hpp"
#include "stprog/tensor.hpp"

namespace stprog {

/// AdamW with decoupled weight decay (decay applied directly to the
/// parameters, not through the gradients) and bias-corrected moments.
/// Only parameters present in the gradient map are touched by a step;
/// each keeps its own step counter.
class AdamW {
 public:
  struct Config {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };
  struct State {
    Tensor m, v;
    long long t = 0;
  };

  explicit AdamW(Config cfg) : cfg_(cfg) {}

  void step(ModelParams& params, const std::map<std::string, Tensor>& grads);

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const Config& config() const { return cfg_; }

  std::map<std::string, State>& state() { return state_; }
  const std::map<std::string, State>& state() const { return state_; }

 private:
  Config cfg_;
  std::map<std::string, State> state_;
};

/// Halves the learning rate after more than `patience` consecutive epochs
/// without strict validation-loss improvement (> min_delta), never going
/// below the floor. The patience counter resets after each cut.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, int patience = 5,
                   double lr_floor = 1e-7, double min_delta = 1e-8)
      : factor_(factor), patience_(patience), floor_(lr_floor),
        min_delta_(min_delta) {}

  /// Feeds one epoch's validation loss; returns the (possibly reduced)
  /// learning rate. Throws NumericError on a non-finite loss.
  double step(double val_loss, double current_lr);

  double best() const { return best_; }
  int epochs_since_improvement() const { return since_; }
  void restore(double best, int since) {
    best_ = best;
    since_ = since;
  }

 private:
  double factor_;
  int patience_;
  double floor_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_ = 0;
};

}  // namespace stprog
