#include "zsr/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <sstream>

#include "zsr/error.hpp"

namespace zsr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  BasicTensor t;
  t.s_ = std::make_shared<TensorStorage<T>>();
  t.s_->data.assign(shape_numel(shape), value);
  t.s_->shape = std::move(shape);
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  BasicTensor t;
  t.s_ = std::make_shared<TensorStorage<T>>();
  t.s_->shape = std::move(shape);
  t.s_->data = std::move(data);
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return from_data(Shape{}, std::vector<T>{value});
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return s_->data[0];
}

template <typename T>
std::span<T> BasicTensor<T>::ensure_grad() const {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  return s_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() const {
  std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_data(s_->shape, s_->data);
}

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> out(s_->data.size());
  std::transform(s_->data.begin(), s_->data.end(), out.begin(),
                 [](T v) { return static_cast<U>(v); });
  auto t = BasicTensor<U>::from_data(s_->shape, std::move(out));
  t.set_requires_grad(s_->requires_grad);
  return t;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<double> BasicTensor<float>::cast<double>() const;
template BasicTensor<float> BasicTensor<double>::cast<float>() const;
template BasicTensor<float> BasicTensor<float>::cast<float>() const;
template BasicTensor<double> BasicTensor<double>::cast<double>() const;

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local bool g_strict = false;
std::atomic<bool> g_deterministic{true};
}  // namespace

Tape* active_tape() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

template <typename T>
void Tape::backward(BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  loss.ensure_grad()[0] += T(1);
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
}

template void Tape::backward<float>(BasicTensor<float>&);
template void Tape::backward<double>(BasicTensor<double>&);

template <typename T>
void backward(BasicTensor<T>& loss) {
  Tape* tape = active_tape();
  if (!tape) throw Error("backward: no active tape");
  tape->backward(loss);
}

template void backward<float>(BasicTensor<float>&);
template void backward<double>(BasicTensor<double>&);

template <typename T>
NoGradGuard<T>::NoGradGuard(std::vector<BasicTensor<T>> tensors) : tensors_(std::move(tensors)) {
  saved_.reserve(tensors_.size());
  for (auto& t : tensors_) {
    saved_.push_back(t.requires_grad());
    t.set_requires_grad(false);
  }
}

template <typename T>
NoGradGuard<T>::~NoGradGuard() {
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].set_requires_grad(saved_[i]);
}

template class NoGradGuard<float>;
template class NoGradGuard<double>;

void set_strict_mode(bool on) noexcept { g_strict = on; }
bool strict_mode() noexcept { return g_strict; }

void set_deterministic(bool on) noexcept {
  g_deterministic = on;
  if (on) Eigen::setNbThreads(1);
}
bool deterministic() noexcept { return g_deterministic; }

}  // namespace zsr
