#pragma once

#include <vector>

#include "resflow/rng.hpp"
#include "resflow/tensor.hpp"

// Differentiable primitives. Every op checks its input shapes (ShapeError
// naming the op and shapes), rounds its output to the active precision,
// rejects non-finite results (NumericError), and records a backward closure
// on the active tape when any input requires gradients.
namespace resflow::ad {

/// a[..., M, K] x b[K, N] -> [..., M, N]; or batched when b is [..., K, N]
/// with the same leading dims as a.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with numpy broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope);

Tensor softmax(const Tensor& a, std::ptrdiff_t axis = -1);
/// Softmax over the last axis restricted to kept entries; masked entries are
/// exactly zero. A row with no kept entry is a logic error.
Tensor masked_softmax(const Tensor& a, const Mask& mask);
Tensor log_softmax(const Tensor& a);

Tensor sum(const Tensor& a, std::ptrdiff_t axis, bool keepdim = false);
Tensor mean(const Tensor& a, std::ptrdiff_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// Normalizes over the last axis, then applies gain and bias of shape [D].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Inverted dropout. Identity (no copy, no record) when not training or rate 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

Tensor transpose(const Tensor& a);  // swaps the last two axes
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end);

/// Divides each vector along the last axis by its L2 norm. Zero vectors are
/// rejected (cosine similarity is undefined for them).
Tensor l2_normalize(const Tensor& a);

/// mean((a - b)^2)
Tensor mse_loss(const Tensor& a, const Tensor& b);

}  // namespace resflow::ad
