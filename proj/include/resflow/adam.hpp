#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resflow/tensor.hpp"

namespace resflow {

struct Parameter {
  std::string name;
  ad::Tensor tensor;
};

using ParameterList = std::vector<Parameter>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Moment tensors are kept
/// in the parameters' order and shape.
class Adam {
 public:
  explicit Adam(ParameterList params, AdamConfig config = {});

  /// Applies one update from the parameters' accumulated gradients. A
  /// non-finite gradient aborts the update before any parameter is touched.
  void step();
  void zero_grad();

  double lr() const { return config_.lr; }
  void set_lr(double lr);
  std::uint64_t step_count() const { return steps_; }
  void set_step_count(std::uint64_t steps) { steps_ = steps; }
  const AdamConfig& config() const { return config_; }

  const ParameterList& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  ParameterList params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t steps_ = 0;
};

/// Learning rate for 0-based `epoch` under per-epoch exponential decay.
double scheduled_lr(double base_lr, double decay, int epoch);

}  // namespace resflow
