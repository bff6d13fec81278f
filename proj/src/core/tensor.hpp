#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "core/common.hpp"

namespace efcn {

// Dense 4-D shape, NCHW. Everything in the engine is 4-D; lower-rank data
// (codeword matrices, per-channel vectors) lives in trailing singleton dims.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  i64 numel() const { return i64(n) * c * h * w; }

  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const { return cat("(", n, ",", c, ",", h, ",", w, ")"); }

  void check_positive(const char* who) const {
    if (n <= 0 || c <= 0 || h <= 0 || w <= 0)
      throw ShapeError(cat(who, ": non-positive shape ", str()));
  }
};

inline void require_same_shape(const char* who, const Shape& a, const Shape& b) {
  if (a != b)
    throw ShapeError(cat(who, ": shape mismatch ", a.str(), " vs ", b.str()));
}

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables graph recording in a scope (inference, metric passes).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
class Tensor;

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<Tensor<T>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode<T>&)> backprop;
};

// Value-semantics handle over a shared autograd node. Ops return fresh
// tensors wired to their inputs; backward() walks the recorded graph.
template <class T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    s.check_positive("Tensor::zeros");
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = s;
    t.node_->value.assign(static_cast<size_t>(s.numel()), T(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape s, T v, bool requires_grad = false) {
    Tensor t = zeros(s, requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from_data(Shape s, std::vector<T> data, bool requires_grad = false) {
    s.check_positive("Tensor::from_data");
    if (static_cast<i64>(data.size()) != s.numel())
      throw ShapeError(cat("Tensor::from_data: ", data.size(), " values for shape ", s.str()));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = s;
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  i64 numel() const { return node_->shape.numel(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T& at(int n, int c, int h, int w) {
    return node_->value[index(n, c, h, w)];
  }
  T at(int n, int c, int h, int w) const {
    return node_->value[index(n, c, h, w)];
  }

  size_t index(int n, int c, int h, int w) const {
    const Shape& s = node_->shape;
    return ((size_t(n) * s.c + c) * s.h + h) * s.w + w;
  }

  // Grad buffer, allocated and zeroed on demand.
  std::vector<T>& grad() {
    ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  void ensure_grad() {
    if (node_->grad.empty())
      node_->grad.assign(node_->value.size(), T(0));
  }
  void clear_grad() { node_->grad.clear(); }

  void set_parents(std::vector<Tensor> parents) { node_->parents = std::move(parents); }
  void set_backprop(std::function<void(Node&)> fn) {
    node_->backprop = std::move(fn);
    node_->requires_grad = true;
  }

  Node* node() const { return node_.get(); }

  // Reverse-mode sweep seeded with ones on this tensor (normally a 1-element
  // loss). Grads of every node in the reachable graph are zeroed first, so
  // leaves carry exactly this sweep's gradients afterwards.
  void backward() {
    if (!node_) throw ValidationError("Tensor::backward: undefined tensor");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    topo(node_.get(), seen, order);
    for (Node* n : order) {
      n->grad.assign(n->value.size(), T(0));
    }
    std::fill(node_->grad.begin(), node_->grad.end(), T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop(**it);
    }
  }

  bool all_finite() const {
    for (T v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  static void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
    if (seen.count(n)) return;
    seen.insert(n);
    for (auto& p : n->parents) topo(p.node(), seen, order);
    order.push_back(n);
  }

  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Integer label map for segmentation targets, (N,H,W).
struct LabelMap {
  int n = 0, h = 0, w = 0;
  std::vector<int> v;

  static LabelMap filled(int n, int h, int w, int value) {
    LabelMap m;
    m.n = n;
    m.h = h;
    m.w = w;
    m.v.assign(size_t(n) * h * w, value);
    return m;
  }

  int& at(int ni, int hi, int wi) { return v[(size_t(ni) * h + hi) * w + wi]; }
  int at(int ni, int hi, int wi) const { return v[(size_t(ni) * h + hi) * w + wi]; }
};

}  // namespace efcn
