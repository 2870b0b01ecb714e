#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "off/common.hpp"
#include "off/rng.hpp"

namespace off {

// Shapes are row-major with rank <= 4. Images are [N,C,H,W]; matrices [N,D];
// vectors [K]; scalars rank 0.
struct Shape {
  std::array<int64_t, 4> d{1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) {
    require(dims.size() <= 4, ErrKind::invalid_shape, "shape: rank > 4");
    rank = int(dims.size());
    int i = 0;
    for (int64_t v : dims) {
      require(v > 0, ErrKind::invalid_shape, "shape: non-positive dim");
      d[i++] = v;
    }
  }

  int64_t operator[](int i) const { return d[size_t(i)]; }
  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= d[size_t(i)];
    return n;
  }
  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (d[size_t(i)] != o.d[size_t(i)]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank; ++i) {
      if (i) s += ",";
      s += std::to_string(d[size_t(i)]);
    }
    return s + "]";
  }
};

template <typename T>
struct NodeT {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // lazily allocated; persists across backward calls
  bool requires_grad = false;
};

// Value-semantic handle over a shared node, so ops can capture inputs/outputs
// by handle inside backward closures.
template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape s) : n_(std::make_shared<NodeT<T>>()) {
    n_->shape = s;
    n_->data.assign(size_t(s.numel()), T(0));
  }
  static TensorT zeros(Shape s) { return TensorT(s); }
  static TensorT full(Shape s, T v) {
    TensorT t(s);
    for (auto& x : t.n_->data) x = v;
    return t;
  }
  static TensorT from_data(Shape s, std::vector<T> v) {
    require(int64_t(v.size()) == s.numel(), ErrKind::invalid_shape,
            "tensor: data size does not match shape " + s.str());
    TensorT t(s);
    t.n_->data = std::move(v);
    return t;
  }
  static TensorT uniform(Shape s, Rng& rng, double lo, double hi) {
    TensorT t(s);
    for (auto& x : t.n_->data) x = T(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return bool(n_); }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return n_->shape.numel(); }
  T* data() { return n_->data.data(); }
  const T* data() const { return n_->data.data(); }
  std::vector<T>& vec() { return n_->data; }
  const std::vector<T>& vec() const { return n_->data; }

  bool requires_grad() const { return n_->requires_grad; }
  TensorT& set_requires_grad(bool b) {
    n_->requires_grad = b;
    return *this;
  }

  std::vector<T>& ensure_grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
    return n_->grad;
  }
  bool has_grad() const { return !n_->grad.empty(); }
  std::vector<T>& grad() {
    require(has_grad(), ErrKind::invalid_argument, "tensor: grad not populated");
    return n_->grad;
  }
  const std::vector<T>& grad() const {
    require(has_grad(), ErrKind::invalid_argument, "tensor: grad not populated");
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
  }

  // rank-4 accessor for tests and loops that favor clarity over speed
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    const Shape& s = n_->shape;
    return n_->data[size_t(((n * s.d[1] + c) * s.d[2] + h) * s.d[3] + w)];
  }
  T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    const Shape& s = n_->shape;
    return n_->data[size_t(((n * s.d[1] + c) * s.d[2] + h) * s.d[3] + w)];
  }

  std::shared_ptr<NodeT<T>> node() const { return n_; }

 private:
  std::shared_ptr<NodeT<T>> n_;
};

// Tape of backward closures, replayed in reverse by backward(). Single
// threaded and append-only, so replay order is deterministic.
template <typename T>
class TapeT {
 public:
  void record(std::function<void()> fn) { fns_.push_back(std::move(fn)); }
  size_t size() const { return fns_.size(); }
  void clear() { fns_.clear(); }

  template <typename U>
  friend void backward(TapeT<U>& tape, TensorT<U>& loss);

 private:
  std::vector<std::function<void()>> fns_;
};

template <typename T>
void backward(TapeT<T>& tape, TensorT<T>& loss) {
  require(loss.numel() == 1, ErrKind::invalid_argument,
          "backward: loss must be scalar, got shape " + loss.shape().str());
  loss.ensure_grad()[0] += T(1);
  for (auto it = tape.fns_.rbegin(); it != tape.fns_.rend(); ++it) (*it)();
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace off
