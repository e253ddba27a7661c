#include "resflow/tensor.hpp"

#include <cmath>
#include <sstream>

namespace resflow::ad {

namespace {
thread_local Precision g_precision = Precision::f32;
thread_local Tape* g_tape = nullptr;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Precision current_precision() { return g_precision; }

PrecisionScope::PrecisionScope(Precision precision) : saved_(g_precision) { g_precision = precision; }
PrecisionScope::~PrecisionScope() { g_precision = saved_; }

double quantize(double v) {
  return g_precision == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void quantize_in_place(std::span<double> values) {
  if (g_precision != Precision::f32) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  quantize_in_place(node_->value);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->ensure_grad();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("dim: axis out of range for " + to_string(shape()));
  return shape()[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) node_->ensure_grad();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

void Tape::record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? to_string(loss.shape()) : "undefined"));
  }
  if (entries_.empty()) throw std::logic_error("backward: tape is empty");
  auto& node = *loss.node();
  node.ensure_grad();
  node.grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

Tape* active_tape() { return g_tape; }

TapeScope::TapeScope(Tape& tape) : saved_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = saved_; }

}  // namespace resflow::ad
