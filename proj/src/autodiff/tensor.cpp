#include <algorithm>
#include <sstream>

#include "ptseg/autodiff.hpp"
#include "ptseg/error.hpp"

namespace ptseg::ad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 1) throw Error(ErrorCode::ShapeMismatch, "tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  impl_->values.assign(shape_size(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (values.size() != shape_size(shape)) {
    throw Error(ErrorCode::ShapeMismatch,
                "value count " + std::to_string(values.size()) + " does not fill shape " +
                    shape_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::ShapeMismatch, "item() needs a single-element tensor");
  return impl_->values[0];
}

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->values, impl_->requires_grad);
}

void Tape::record(std::string op, std::function<void()> backward) {
  if (replayed_) throw Error(ErrorCode::InvalidArgument, "cannot record on a replayed tape");
  nodes_.push_back({std::move(op), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (replayed_) throw Error(ErrorCode::InvalidArgument, "tape has already been replayed");
  if (loss.numel() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a scalar loss");
  replayed_ = true;
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

std::size_t Tape::count(std::string_view op) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [&](const Node& n) { return n.op == op; }));
}

}  // namespace ptseg::ad
