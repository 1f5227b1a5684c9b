#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace zsr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
};

/// Reference-counted n-dimensional array. Copies of a tensor share storage,
/// which is what lets the tape route gradients back into parameters. Use
/// `detach()` for a deep copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor from_data(Shape shape, std::vector<T> data);
  static BasicTensor scalar(T value);

  bool defined() const noexcept { return static_cast<bool>(s_); }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* ptr() { return s_->data.data(); }
  const T* ptr() const { return s_->data.data(); }
  T item() const;

  bool requires_grad() const noexcept { return s_ && s_->requires_grad; }
  // Gradient state lives in the shared storage, so these are handle-const.
  void set_requires_grad(bool on) const { s_->requires_grad = on; }

  bool has_grad() const noexcept { return s_ && !s_->grad.empty(); }
  std::span<T> grad() const { return s_->grad; }
  /// Allocates a zero gradient buffer if none exists.
  std::span<T> ensure_grad() const;
  void zero_grad() const;
  void clear_grad() const { s_->grad.clear(); }

  /// Deep copy of shape and data; no gradient, requires_grad off.
  BasicTensor detach() const;
  template <typename U>
  BasicTensor<U> cast() const;

  bool same_storage(const BasicTensor& other) const noexcept { return s_ == other.s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Ordered record of backward rules. Each differentiable op that sees an
/// input with requires_grad appends one rule while a tape is active; backward
/// replays them in reverse and then clears the tape.
class Tape {
 public:
  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const noexcept { return rules_.size(); }
  void clear() { rules_.clear(); }

  template <typename T>
  void backward(BasicTensor<T>& loss);

 private:
  std::vector<std::function<void()>> rules_;
};

/// Makes `tape` the active tape of the calling thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

/// Backward through the active tape. Throws if none is active or the loss is
/// not a scalar.
template <typename T>
void backward(BasicTensor<T>& loss);

/// Temporarily turns requires_grad off on a set of tensors (e.g. model
/// parameters while an attack differentiates with respect to the input).
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(std::vector<BasicTensor<T>> tensors);
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  std::vector<BasicTensor<T>> tensors_;
  std::vector<bool> saved_;
};

/// Strict mode makes every op reject non-finite inputs.
void set_strict_mode(bool on) noexcept;
bool strict_mode() noexcept;

/// Deterministic mode pins every reduction to a single thread.
void set_deterministic(bool on) noexcept;
bool deterministic() noexcept;

}  // namespace zsr
