#include "stprog/optim.hpp"

#include <cmath>
#include <limits>

#include "stprog/errors.hpp"

namespace stprog {

void AdamW::step(ModelParams& params, const std::map<std::string, Tensor>& grads) {
  for (const auto& [name, grad] : grads) {
    if (!params.has(name)) {
      throw Error("AdamW::step: gradient for unknown parameter '" + name + "'");
    }
    Tensor& p = params.at(name);
    if (!p.same_shape(grad)) {
      throw ShapeError("AdamW::step: gradient shape " + grad.shape_str() +
                       " does not match parameter '" + name + "' " +
                       p.shape_str());
    }
    State& s = state_[name];
    if (!s.m.defined()) {
      s.m = Tensor(p.shape());
      s.v = Tensor(p.shape());
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grad[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p[i] -= cfg_.lr * cfg_.weight_decay * p[i];  // decoupled decay
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double PlateauScheduler::step(double val_loss, double current_lr) {
  if (!std::isfinite(val_loss)) {
    throw NumericError("PlateauScheduler: non-finite validation loss");
  }
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    since_ = 0;
    return current_lr;
  }
  ++since_;
  if (since_ > patience_) {
    since_ = 0;
    return std::max(current_lr * factor_, floor_);
  }
  return current_lr;
}

}  // namespace stprog
