#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gatevit {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace nd {

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass touches this tensor
  bool requires_grad = false;
  std::string name;
};

/// Shared handle to a dense row-major array. Copies alias the same storage;
/// use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : d_(std::make_shared<TensorData<T>>()) {
    d_->value.assign(shape_size(shape), fill);
    d_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::vector<T> values) : d_(std::make_shared<TensorData<T>>()) {
    if (shape_size(shape) != values.size())
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    d_->shape = std::move(shape);
    d_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }

  std::span<T> data() { return d_->value; }
  std::span<const T> data() const { return d_->value; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return d_->value[0];
  }
  T operator[](std::size_t i) const { return d_->value[i]; }
  T& operator[](std::size_t i) { return d_->value[i]; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    d_->requires_grad = on;
    return *this;
  }
  const std::string& name() const { return d_->name; }
  Tensor& set_name(std::string n) {
    d_->name = std::move(n);
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }
  // Gradients accumulate through any handle, including const ones captured by
  // backward closures.
  std::span<T> grad() const {
    ensure_grad();
    return d_->grad;
  }
  void ensure_grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), T{0});
  }
  void zero_grad() { d_->grad.clear(); }

  Tensor clone() const {
    Tensor t(shape(), d_->value);
    t.d_->requires_grad = d_->requires_grad;
    t.d_->name = d_->name;
    return t;
  }
  /// Same values, fresh storage, no autodiff history.
  Tensor detach() const { return Tensor(shape(), d_->value); }

  TensorData<T>* impl() const { return d_.get(); }
  const std::shared_ptr<TensorData<T>>& handle() const { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

/// Ordered record of differentiable operations. Backward replays the adjoint
/// closures in reverse order of recording.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> adjoint) { entries_.push_back(std::move(adjoint)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint in reverse.
  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad()[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> entries_;
};

namespace detail {
template <typename T>
inline thread_local Tape<T>* active_tape = nullptr;
}

template <typename T>
Tape<T>* active_tape() {
  return detail::active_tape<T>;
}

/// Makes `tape` the recording target for the current thread while in scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape<T>) { detail::active_tape<T> = &tape; }
  ~TapeScope() { detail::active_tape<T> = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Suspends recording (inference mode) while in scope.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::active_tape<T>) { detail::active_tape<T> = nullptr; }
  ~NoGradScope() { detail::active_tape<T> = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Returns the tape to record on if any input participates in differentiation.
template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) return nullptr;
  for (const Tensor<T>* t : inputs)
    if (t && t->defined() && t->requires_grad()) return tape;
  return nullptr;
}

template <typename T>
Tape<T>* recording_tape(const std::vector<Tensor<T>>& inputs) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) return nullptr;
  for (const Tensor<T>& t : inputs)
    if (t.requires_grad()) return tape;
  return nullptr;
}

}  // namespace nd
}  // namespace gatevit
