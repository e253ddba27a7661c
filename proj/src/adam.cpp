#include "resflow/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace resflow {

Adam::Adam(ParameterList params, AdamConfig config) : params_(std::move(params)), config_(config) {
  set_lr(config.lr);
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::set_lr(double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
  config_.lr = lr;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step() {
  for (const auto& p : params_) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw ad::NumericError("adam: non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto values = params_[k].tensor.mutable_values();
    auto grad = params_[k].tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = ad::quantize(b1 * m[i] + (1.0 - b1) * grad[i]);
      v[i] = ad::quantize(b2 * v[i] + (1.0 - b2) * grad[i] * grad[i]);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] = ad::quantize(values[i] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

double scheduled_lr(double base_lr, double decay, int epoch) { return base_lr * std::pow(decay, epoch); }

}  // namespace resflow
