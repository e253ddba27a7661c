#include "resflow/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace resflow::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using NodePtr = std::shared_ptr<Node>;

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor finish(const char* op, Shape shape, std::vector<double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
  return Tensor(std::move(shape), std::move(values));
}

template <class F>
void attach(Tensor& out, F&& fn) {
  out.node()->requires_grad = true;
  active_tape()->record(std::forward<F>(fn));
}

bool has_grad(const NodePtr& n) { return !n->grad.empty(); }

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const auto rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Offset into `in` for every flat index of `out`, where `in` broadcasts to `out`.
std::vector<std::size_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const auto rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const auto in_axis = in.size() - 1 - k;
    const auto out_axis = rank - 1 - k;
    stride[out_axis] = in[in_axis] == 1 ? 0 : s;
    s *= in[in_axis];
  }
  const auto n = numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    offsets[i] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      off += stride[k];
      if (idx[k] < out[k]) break;
      off -= stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  return offsets;
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  const auto& va = a.values();
  const auto& vb = b.values();
  const bool same = a.shape() == b.shape();
  Shape out_shape = same ? a.shape() : broadcast_shape(a.shape(), b.shape(), op);
  const auto n = numel(out_shape);
  std::vector<std::size_t> oa, ob;
  if (!same) {
    oa = broadcast_offsets(out_shape, a.shape());
    ob = broadcast_offsets(out_shape, b.shape());
  }
  auto ia = [&](std::size_t i) { return same ? i : oa[i]; };
  auto ib = [&](std::size_t i) { return same ? i : ob[i]; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = va[ia(i)], y = vb[ib(i)];
    out[i] = kind == BinaryKind::add ? x + y : kind == BinaryKind::sub ? x - y : x * y;
  }
  Tensor result = finish(op, out_shape, std::move(out));
  if (needs_grad({&a, &b})) {
    attach(result, [o = result.node(), na = a.node(), nb = b.node(), same, oa = std::move(oa), ob = std::move(ob),
                    kind] {
      if (!has_grad(o)) return;
      const auto n = o->value.size();
      const auto& g = o->grad;
      if (na->requires_grad) {
        na->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const auto j = same ? i : oa[i];
          const double bval = nb->value[same ? i : ob[i]];
          na->grad[j] += kind == BinaryKind::mul ? g[i] * bval : g[i];
        }
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const auto j = same ? i : ob[i];
          const double aval = na->value[same ? i : oa[i]];
          nb->grad[j] += kind == BinaryKind::mul ? g[i] * aval : kind == BinaryKind::sub ? -g[i] : g[i];
        }
      }
    });
  }
  return result;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  const auto& va = a.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  Tensor result = finish(op, a.shape(), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), deriv] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) na->grad[i] += o->grad[i] * deriv(na->value[i], o->value[i]);
    });
  }
  return result;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const auto k = a.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto ncols = b.dim(-1);
  Shape out_shape = a.shape();
  out_shape.back() = ncols;

  if (b.rank() == 2) {
    const auto rows = a.numel() / k;
    std::vector<double> out(rows * ncols);
    MutMap(out.data(), rows, ncols).noalias() = ConstMap(a.values().data(), rows, k) * ConstMap(b.values().data(), k, ncols);
    Tensor result = finish("matmul", out_shape, std::move(out));
    if (needs_grad({&a, &b})) {
      attach(result, [o = result.node(), na = a.node(), nb = b.node(), rows, k, ncols] {
        if (!has_grad(o)) return;
        ConstMap g(o->grad.data(), rows, ncols);
        if (na->requires_grad) {
          na->ensure_grad();
          MutMap(na->grad.data(), rows, k).noalias() += g * ConstMap(nb->value.data(), k, ncols).transpose();
        }
        if (nb->requires_grad) {
          nb->ensure_grad();
          MutMap(nb->grad.data(), k, ncols).noalias() += ConstMap(na->value.data(), rows, k).transpose() * g;
        }
      });
    }
    return result;
  }

  if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw ShapeError("matmul: batch dimensions differ for " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto m = a.dim(-2);
  const auto batch = a.numel() / (m * k);
  std::vector<double> out(batch * m * ncols);
  for (std::size_t p = 0; p < batch; ++p) {
    MutMap(out.data() + p * m * ncols, m, ncols).noalias() =
        ConstMap(a.values().data() + p * m * k, m, k) * ConstMap(b.values().data() + p * k * ncols, k, ncols);
  }
  Tensor result = finish("matmul", out_shape, std::move(out));
  if (needs_grad({&a, &b})) {
    attach(result, [o = result.node(), na = a.node(), nb = b.node(), batch, m, k, ncols] {
      if (!has_grad(o)) return;
      if (na->requires_grad) na->ensure_grad();
      if (nb->requires_grad) nb->ensure_grad();
      for (std::size_t p = 0; p < batch; ++p) {
        ConstMap g(o->grad.data() + p * m * ncols, m, ncols);
        if (na->requires_grad) {
          MutMap(na->grad.data() + p * m * k, m, k).noalias() +=
              g * ConstMap(nb->value.data() + p * k * ncols, k, ncols).transpose();
        }
        if (nb->requires_grad) {
          MutMap(nb->grad.data() + p * k * ncols, k, ncols).noalias() +=
              ConstMap(na->value.data() + p * m * k, m, k).transpose() * g;
        }
      }
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  return unary(
      a, "leaky_relu", [negative_slope](double x) { return x > 0.0 ? x : negative_slope * x; },
      [negative_slope](double x, double) { return x > 0.0 ? 1.0 : negative_slope; });
}

Tensor softmax(const Tensor& a, std::ptrdiff_t axis) {
  const auto ax = normalize_axis(axis, a.rank(), "softmax");
  const auto s = split_at(a.shape(), ax);
  const auto& v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const auto base = o * s.len * s.inner + in;
      double mx = -INFINITY;
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, v[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) z += out[base + l * s.inner] = std::exp(v[base + l * s.inner] - mx);
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  Tensor result = finish("softmax", a.shape(), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), s] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t b = 0; b < s.outer; ++b) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const auto base = b * s.len * s.inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < s.len; ++l) dot += o->value[base + l * s.inner] * o->grad[base + l * s.inner];
          for (std::size_t l = 0; l < s.len; ++l) {
            const auto i = base + l * s.inner;
            na->grad[i] += o->value[i] * (o->grad[i] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor masked_softmax(const Tensor& a, const Mask& mask) {
  if (a.rank() == 0) throw ShapeError("masked_softmax: scalar input");
  if (numel(mask.shape) != mask.keep.size()) throw ShapeError("masked_softmax: malformed mask");
  if (broadcast_shape(a.shape(), mask.shape, "masked_softmax") != a.shape()) {
    throw ShapeError("masked_softmax: mask " + to_string(mask.shape) + " does not broadcast to " + to_string(a.shape()));
  }
  const auto offsets = broadcast_offsets(a.shape(), mask.shape);
  const auto len = a.dim(-1);
  const auto rows = a.numel() / len;
  const auto& v = a.values();
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto base = r * len;
    double mx = -INFINITY;
    for (std::size_t l = 0; l < len; ++l) {
      if (mask.keep[offsets[base + l]]) mx = std::max(mx, v[base + l]);
    }
    if (mx == -INFINITY) throw std::logic_error("masked_softmax: row " + std::to_string(r) + " has no kept entry");
    double z = 0.0;
    for (std::size_t l = 0; l < len; ++l) {
      if (mask.keep[offsets[base + l]]) z += out[base + l] = std::exp(v[base + l] - mx);
    }
    for (std::size_t l = 0; l < len; ++l) out[base + l] /= z;
  }
  Tensor result = finish("masked_softmax", a.shape(), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), rows, len] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const auto base = r * len;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += o->value[base + l] * o->grad[base + l];
        for (std::size_t l = 0; l < len; ++l) na->grad[base + l] += o->value[base + l] * (o->grad[base + l] - dot);
      }
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("log_softmax: scalar input");
  const auto len = a.dim(-1);
  const auto rows = a.numel() / len;
  const auto& v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto base = r * len;
    double mx = -INFINITY;
    for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, v[base + l]);
    double z = 0.0;
    for (std::size_t l = 0; l < len; ++l) z += std::exp(v[base + l] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t l = 0; l < len; ++l) out[base + l] = v[base + l] - lse;
  }
  Tensor result = finish("log_softmax", a.shape(), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), rows, len] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const auto base = r * len;
        double gsum = 0.0;
        for (std::size_t l = 0; l < len; ++l) gsum += o->grad[base + l];
        for (std::size_t l = 0; l < len; ++l) {
          na->grad[base + l] += o->grad[base + l] - std::exp(o->value[base + l]) * gsum;
        }
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& a, std::ptrdiff_t axis, bool keepdim) {
  const auto ax = normalize_axis(axis, a.rank(), "sum");
  const auto s = split_at(a.shape(), ax);
  const auto& v = a.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const auto src = (o * s.len + l) * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += v[src + in];
    }
  }
  Shape shape = a.shape();
  if (keepdim) {
    shape[ax] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  Tensor result = finish("sum", std::move(shape), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), s] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t b = 0; b < s.outer; ++b) {
        for (std::size_t l = 0; l < s.len; ++l) {
          const auto dst = (b * s.len + l) * s.inner;
          for (std::size_t in = 0; in < s.inner; ++in) na->grad[dst + in] += o->grad[b * s.inner + in];
        }
      }
    });
  }
  return result;
}

Tensor mean(const Tensor& a, std::ptrdiff_t axis, bool keepdim) {
  const auto ax = normalize_axis(axis, a.rank(), "mean");
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.shape()[ax]));
}

Tensor sum_all(const Tensor& a) {
  const auto& v = a.values();
  double total = 0.0;
  for (double x : v) total += x;
  Tensor result = finish("sum_all", {}, {total});
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node()] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (auto& g : na->grad) g += o->grad[0];
    });
  }
  return result;
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const auto d = x.dim(-1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                     " do not match feature size of " + to_string(x.shape()));
  }
  const auto rows = x.numel() / d;
  const auto& v = x.values();
  const auto& g = gain.values();
  const auto& b = bias.values();
  std::vector<double> out(v.size()), xhat(v.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto base = r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += v[base + i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (v[base + i] - mu) * (v[base + i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[base + i] = (v[base + i] - mu) * inv_std[r];
      out[base + i] = xhat[base + i] * g[i] + b[i];
    }
  }
  Tensor result = finish("layer_norm", x.shape(), std::move(out));
  if (needs_grad({&x, &gain, &bias})) {
    attach(result, [o = result.node(), nx = x.node(), ng = gain.node(), nb = bias.node(), xhat = std::move(xhat),
                    inv_std = std::move(inv_std), rows, d] {
      if (!has_grad(o)) return;
      if (ng->requires_grad) ng->ensure_grad();
      if (nb->requires_grad) nb->ensure_grad();
      if (nx->requires_grad) nx->ensure_grad();
      const double dd = static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto base = r * d;
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double dy = o->grad[base + i];
          if (ng->requires_grad) ng->grad[i] += dy * xhat[base + i];
          if (nb->requires_grad) nb->grad[i] += dy;
          const double dxh = dy * ng->value[i];
          s1 += dxh;
          s2 += dxh * xhat[base + i];
        }
        if (!nx->requires_grad) continue;
        for (std::size_t i = 0; i < d; ++i) {
          const double dxh = o->grad[base + i] * ng->value[i];
          nx->grad[base + i] += inv_std[r] / dd * (dd * dxh - s1 - xhat[base + i] * s2);
        }
      }
    });
  }
  return result;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.numel());
  for (auto& f : factor) f = rng.bernoulli(rate) ? 0.0 : keep_scale;
  const auto& v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * factor[i];
  Tensor result = finish("dropout", x.shape(), std::move(out));
  if (needs_grad({&x})) {
    attach(result, [o = result.node(), nx = x.node(), factor = std::move(factor)] {
      if (!has_grad(o) || !nx->requires_grad) return;
      nx->ensure_grad();
      for (std::size_t i = 0; i < factor.size(); ++i) nx->grad[i] += o->grad[i] * factor[i];
    });
  }
  return result;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto rank = a.rank();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) throw ShapeError("permute: axis list does not match rank of " + to_string(a.shape()));
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]) throw ShapeError("permute: invalid axis list for " + to_string(a.shape()));
    seen[ax] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t k = rank; k-- > 1;) in_stride[k - 1] = in_stride[k] * a.shape()[k];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = a.shape()[axes[k]];
    stride[k] = in_stride[axes[k]];
  }
  const auto n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      off += stride[k];
      if (idx[k] < out_shape[k]) break;
      off -= stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  const auto& v = a.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = v[src[i]];
  Tensor result = finish("permute", std::move(out_shape), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), src = std::move(src)] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < src.size(); ++i) na->grad[src[i]] += o->grad[i];
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: rank < 2 for " + to_string(a.shape()));
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor result = finish("reshape", std::move(shape), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node()] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) na->grad[i] += o->grad[i];
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto ax = normalize_axis(axis, parts.front().rank(), "concat");
  Shape out_shape = parts.front().shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw ShapeError("concat: rank mismatch at " + to_string(p.shape()));
    for (std::size_t k = 0; k < out_shape.size(); ++k) {
      if (k != ax && p.shape()[k] != parts.front().shape()[k]) {
        throw ShapeError("concat: " + to_string(p.shape()) + " incompatible with " + to_string(parts.front().shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  const auto total = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    const auto s = split_at(p.shape(), ax);
    const auto& v = p.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * s.len * s.inner), s.len * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total.len + at) * total.inner));
    }
    at += s.len;
  }
  Tensor result = finish("concat", out_shape, std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || needs_grad({&p});
  if (any) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    attach(result, [o = result.node(), nodes = std::move(nodes), offsets = std::move(offsets), ax, total] {
      if (!has_grad(o)) return;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        auto& n = nodes[pi];
        if (!n->requires_grad) continue;
        n->ensure_grad();
        const auto s = split_at(n->shape, ax);
        for (std::size_t b = 0; b < s.outer; ++b) {
          const auto src = (b * total.len + offsets[pi]) * total.inner;
          for (std::size_t i = 0; i < s.len * s.inner; ++i) n->grad[b * s.len * s.inner + i] += o->grad[src + i];
        }
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const auto ax = normalize_axis(axis, a.rank(), "slice");
  if (begin >= end || end > a.shape()[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(ax) + " of " + to_string(a.shape()));
  }
  const auto s = split_at(a.shape(), ax);
  const auto len = end - begin;
  Shape out_shape = a.shape();
  out_shape[ax] = len;
  const auto& v = a.values();
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * s.len + begin) * s.inner), len * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner));
  }
  Tensor result = finish("slice", std::move(out_shape), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), s, begin, len] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t b = 0; b < s.outer; ++b) {
        for (std::size_t i = 0; i < len * s.inner; ++i) {
          na->grad[(b * s.len + begin) * s.inner + i] += o->grad[b * len * s.inner + i];
        }
      }
    });
  }
  return result;
}

Tensor l2_normalize(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("l2_normalize: scalar input");
  const auto d = a.dim(-1);
  const auto rows = a.numel() / d;
  const auto& v = a.values();
  std::vector<double> out(v.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += v[r * d + i] * v[r * d + i];
    if (ss == 0.0) throw NumericError("l2_normalize: zero-norm vector at row " + std::to_string(r));
    norms[r] = std::sqrt(ss);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = v[r * d + i] / norms[r];
  }
  Tensor result = finish("l2_normalize", a.shape(), std::move(out));
  if (needs_grad({&a})) {
    attach(result, [o = result.node(), na = a.node(), norms = std::move(norms), rows, d] {
      if (!has_grad(o) || !na->requires_grad) return;
      na->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += o->value[r * d + i] * o->grad[r * d + i];
        for (std::size_t i = 0; i < d; ++i) {
          na->grad[r * d + i] += (o->grad[r * d + i] - o->value[r * d + i] * dot) / norms[r];
        }
      }
    });
  }
  return result;
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse_loss: shapes differ, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  return mean_all(square(sub(a, b)));
}

}  // namespace resflow::ad
