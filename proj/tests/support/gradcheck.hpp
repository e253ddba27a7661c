#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.
// It only touches parameter values and re-evaluates the loss closure without
// a tape, so it stays independent of the reverse-mode path it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "resflow/adam.hpp"
#include "resflow/tensor.hpp"

namespace resflow::oracle {

struct GradCheckResult {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t checked = 0;
};

inline std::vector<double> analytic_gradient(ParameterList& params, const std::function<ad::Tensor()>& loss_fn) {
  for (auto& p : params) p.tensor.zero_grad();
  ad::Tape tape;
  ad::Tensor loss;
  {
    ad::TapeScope scope(tape);
    loss = loss_fn();
  }
  tape.backward(loss);
  std::vector<double> out;
  for (auto& p : params) {
    auto g = p.tensor.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

inline std::vector<double> numeric_gradient(ParameterList& params, const std::function<ad::Tensor()>& loss_fn,
                                            double step = 1e-4) {
  std::vector<double> out;
  for (auto& p : params) {
    auto values = p.tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      out.push_back((up - down) / (2.0 * step));
    }
  }
  return out;
}

inline GradCheckResult compare_gradients(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  GradCheckResult r;
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    r.analytic_norm += analytic[i] * analytic[i];
    r.numeric_norm += numeric[i] * numeric[i];
  }
  r.analytic_norm = std::sqrt(r.analytic_norm);
  r.numeric_norm = std::sqrt(r.numeric_norm);
  r.rel_error = std::sqrt(diff) / std::max({r.analytic_norm, r.numeric_norm, 1e-300});
  r.checked = analytic.size();
  return r;
}

/// Must be called under PrecisionScope(Precision::f64).
inline GradCheckResult check_gradients(ParameterList& params, const std::function<ad::Tensor()>& loss_fn,
                                       double step = 1e-4) {
  auto analytic = analytic_gradient(params, loss_fn);
  auto numeric = numeric_gradient(params, loss_fn, step);
  return compare_gradients(analytic, numeric);
}

}  // namespace resflow::oracle
