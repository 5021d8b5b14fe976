#pragma once

// Dense n-dimensional arrays with a reverse-mode autodiff tape.
//
// A BasicTensor is a shared handle: copies alias the same storage, which is
// what lets the tape route gradients back to parameters. Use clone() for a
// deep copy. Data is row-major. All stored values must be finite.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace deepself {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Storage = detail::TensorStorage<T>;

  /// Scalar zero.
  BasicTensor();
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// Mutable view for optimizers and initialisers. Does not record on the tape.
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T operator[](std::size_t flat_index) const { return impl_->data[flat_index]; }

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);
  bool has_grad() const { return impl_->requires_grad; }
  /// Accumulated gradient; empty span when requires_grad is off.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  void zero_grad();

  /// Deep copy without gradient state.
  BasicTensor clone() const;
  /// Same storage identity check.
  bool same_as(const BasicTensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<Storage>& storage() const { return impl_; }
  static BasicTensor from_storage(std::shared_ptr<Storage> storage);

 private:
  std::shared_ptr<Storage> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// One recorded operation. `backward` reads output->grad and accumulates into
/// the grads of the inputs that require them.
template <typename T>
struct TapeEntry {
  std::string op;
  std::vector<std::shared_ptr<detail::TensorStorage<T>>> inputs;
  std::shared_ptr<detail::TensorStorage<T>> output;
  std::function<void()> backward;
};

/// Per-thread ordered operation log. Entries are appended as operations run,
/// so recording order is a topological order of the computation.
template <typename T>
class Tape {
 public:
  static Tape& current();

  bool recording() const { return enabled_; }
  void record(TapeEntry<T> entry);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Replays backward rules in reverse recording order, seeding d(loss)=1,
  /// then clears the tape.
  void backward(const BasicTensor<T>& loss);

 private:
  friend class NoGradGuard;
  std::vector<TapeEntry<T>> entries_;
  bool enabled_ = true;
};

/// Disables tape recording (both precisions) on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_float_;
  bool prev_double_;
};

/// Populates grad on every requires_grad tensor reachable from `loss` on the
/// current thread's tape. Gradients accumulate by summation.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

}  // namespace deepself
