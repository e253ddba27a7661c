#include "resflow/nn.hpp"

#include <cmath>

#include "resflow/ops.hpp"

namespace resflow::nn {

ad::Tensor dropout(const ad::Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout == 0.0) return x;
  return ad::dropout(x, ctx.dropout, *ctx.rng, true);
}

ad::Tensor xavier(ad::Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return ad::Tensor(std::move(shape), std::move(v), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) : weight(xavier({in, out}, in, out, rng)) {
  if (with_bias) bias = ad::Tensor::zeros({out}, true);
}

ad::Tensor Linear::operator()(const ad::Tensor& x) const {
  auto y = ad::matmul(x, weight);
  return bias.defined() ? ad::add(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim) : gain(ad::Tensor::full({dim}, 1.0, true)), bias(ad::Tensor::zeros({dim}, true)) {}

ad::Tensor LayerNorm::operator()(const ad::Tensor& x) const { return ad::layer_norm(x, gain, bias); }

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

}  // namespace resflow::nn
