#include "deepself/tensor.hpp"

#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "deepself/error.hpp"

namespace deepself {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor() : BasicTensor(Shape{1}) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Storage>()) {
  check_shape(shape);
  if (!std::isfinite(fill)) throw NumericError("tensor fill value is not finite");
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Storage>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_str(shape),
                                 shape_numel(shape), values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw NumericError(fmt::format("non-finite tensor value at index {}", i));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) throw IndexError(fmt::format("axis {} out of range for shape {}", axis, shape_str(shape())));
  return impl_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on) {
    impl_->ensure_grad();
  } else {
    impl_->grad.clear();
  }
  return *this;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(impl_->shape, impl_->data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_storage(std::shared_ptr<Storage> storage) {
  BasicTensor t;
  t.impl_ = std::move(storage);
  return t;
}

template <typename T>
Tape<T>& Tape<T>::current() {
  thread_local Tape<T> tape;
  return tape;
}

template <typename T>
void Tape<T>::record(TapeEntry<T> entry) {
  entries_.push_back(std::move(entry));
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    clear();
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    // Nothing reachable requires a gradient.
    clear();
    return;
  }
  const auto& root = loss.storage();
  root->ensure_grad();
  root->grad[0] += T{1};

  // Entries are moved out first so the tape is cleared even if a rule throws.
  auto entries = std::move(entries_);
  entries_.clear();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    it->backward();
    for (const auto& in : it->inputs) {
      if (!in->requires_grad) continue;
      for (auto g : in->grad) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient produced by op '" + it->op + "'");
      }
    }
  }
}

NoGradGuard::NoGradGuard()
    : prev_float_(Tape<float>::current().enabled_), prev_double_(Tape<double>::current().enabled_) {
  Tape<float>::current().enabled_ = false;
  Tape<double>::current().enabled_ = false;
}

NoGradGuard::~NoGradGuard() {
  Tape<float>::current().enabled_ = prev_float_;
  Tape<double>::current().enabled_ = prev_double_;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace deepself
