#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lightcts {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const Tape* tape = nullptr;  // producing tape; null for leaves
};

// Dense row-major float64 array. Copies share storage; use clone() for a
// deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // All-zero view when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy without gradient history.
  Tensor clone() const;

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Receives the recorded output; its grad holds d(loss)/d(output).
using BackwardFn = std::function<void(const TensorImpl& output)>;

// Define-by-run record of differentiable operations, in execution order.
// Operations record themselves onto the tape made active by a TapeScope.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& output,
              std::vector<std::shared_ptr<TensorImpl>> inputs,
              BackwardFn backward);

  // Accumulates d(loss)/d(t) into t.grad for every requires_grad tensor
  // reachable from loss. Throws ContractError if loss is not a scalar
  // recorded on this tape.
  void backward(const Tensor& loss) const;

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl> output;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

// Makes a tape the recording target for the current thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Gradient buffer of t, allocated (zeroed) on first use.
std::span<double> grad_buffer(TensorImpl& t);

}  // namespace lightcts
