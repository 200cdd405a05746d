#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace iars {

using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Dense n-d tensor with shared storage. Copying a Tensor copies the handle,
// not the buffer; ops that see the same impl on two arguments accumulate
// gradient contributions into the same buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    check_shape(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(static_cast<std::size_t>(numel(t.impl_->shape)), T(0));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.data()) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    check_shape(shape);
    if (static_cast<long long>(values.size()) != numel(shape))
      throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
  long long size() const { return static_cast<long long>(impl_->value.size()); }

  std::vector<T>& data() { return impl_->value; }
  const std::vector<T>& data() const { return impl_->value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<T>& grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  const std::vector<T>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), T(0));
  }

  T& operator[](std::size_t i) { return impl_->value[i]; }
  const T& operator[](std::size_t i) const { return impl_->value[i]; }

  // 4-D convenience accessor (batch, channel, row, col).
  T at4(int n, int c, int h, int w) const {
    const Shape& s = impl_->shape;
    return impl_->value[((static_cast<std::size_t>(n) * s[1] + c) * s[2] + h) * s[3] + w];
  }

  bool finite() const {
    for (T v : impl_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Tensor clone() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->value = impl_->value;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }
  std::shared_ptr<TensorImpl<T>> handle() const { return impl_; }
  TensorImpl<T>* ptr() const { return impl_.get(); }

 private:
  static void check_shape(const Shape& shape) {
    for (int d : shape)
      if (d <= 0) throw std::invalid_argument("non-positive extent in shape " + shape_str(shape));
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

// Records one backward closure per forward op, in execution order. The
// closures capture the tensor handles they need; backward() replays them in
// exact reverse and then clears the list. At most one tape is active per
// thread; ops record only while a tape is active and an input requires grad.
template <typename T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };

  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(const char* op, std::function<void()> fn) {
    nodes_.push_back(Node{op, std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  // accumulate (+=) so tensors used more than once sum their contributions.
  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("backward expects a scalar loss, got shape " +
                                  shape_str(loss.shape()));
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    clear();
  }

 private:
  std::vector<Node> nodes_;
  Tape* prev_;
  inline static thread_local Tape* active_ = nullptr;
};

// True when an op invoked with inputs of the given requires_grad flags
// should record itself on the active tape.
template <typename T>
inline bool tracing(std::initializer_list<bool> requires_grad_flags) {
  if (Tape<T>::active() == nullptr) return false;
  for (bool b : requires_grad_flags)
    if (b) return true;
  return false;
}

}  // namespace iars
