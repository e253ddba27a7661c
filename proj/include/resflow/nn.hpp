#pragma once

#include <string>

#include "resflow/adam.hpp"
#include "resflow/rng.hpp"
#include "resflow/tensor.hpp"

namespace resflow::nn {

/// Per-call forward settings. Dropout draws from `rng` only while training.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  double dropout = 0.0;
  bool capture = false;  // keep attention maps for export
};

ad::Tensor dropout(const ad::Tensor& x, const ForwardContext& ctx);

/// Leaf parameter with Xavier-uniform values.
ad::Tensor xavier(ad::Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// y = x W (+ b) over the last axis.
struct Linear {
  ad::Tensor weight;  // [in, out]
  ad::Tensor bias;    // [out], undefined when bias-free

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  ad::Tensor operator()(const ad::Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct LayerNorm {
  ad::Tensor gain;
  ad::Tensor bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  ad::Tensor operator()(const ad::Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

}  // namespace resflow::nn
