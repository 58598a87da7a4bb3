#include "lightcts/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "lightcts/errors.hpp"

namespace lightcts {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, requires_grad()); }

std::span<double> grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

void Tape::record(const Tensor& output,
                  std::vector<std::shared_ptr<TensorImpl>> inputs,
                  BackwardFn backward) {
  output.impl()->tape = this;
  entries_.push_back({output.impl(), std::move(inputs), std::move(backward)});
}

void Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  const auto& root = loss.impl();
  if (root->tape != this) {
    throw ContractError("backward(): loss was not recorded on this tape");
  }
  auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                         [&](const Entry& e) { return e.output == root; });
  if (it == entries_.rend()) {
    throw ContractError("backward(): loss was not recorded on this tape");
  }

  // Intermediate buffers restart from zero so repeated calls do not compound.
  for (auto e = it; e != entries_.rend(); ++e) e->output->grad.clear();
  grad_buffer(*root)[0] = 1.0;

  for (; it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

}  // namespace lightcts
