#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace resflow::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when an operation receives incompatible shapes. The message names
/// the operation and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward result or a gradient is not finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Storage precision of forward values. In f32 mode every op output is
/// rounded to the nearest float; f64 keeps full double precision and is used
/// by the gradient checks.
enum class Precision { f32, f64 };

Precision current_precision();

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision precision);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

/// Rounds `v` to the active storage precision.
double quantize(double v);
void quantize_in_place(std::span<double> values);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Dense row-major tensor with shared value semantics: copies alias the same
/// storage. Values are immutable once produced by an op; only leaf tensors
/// (parameters) are written through `mutable_values`.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of `axis`; negative axes count from the back.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool on);

  /// New leaf holding a copy of the values, cut from any tape.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations for one training step.
/// Operations created while a tape is active (see TapeScope) and touching a
/// tensor that requires gradients append a backward closure. `backward`
/// replays the closures in exact reverse creation order, which is a reverse
/// topological order, and then clears the record.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

/// The tape ops record onto on this thread, or nullptr.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* saved_;
};

/// Boolean keep-mask broadcast against a tensor (numpy rules, right-aligned).
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;
};

}  // namespace resflow::ad
