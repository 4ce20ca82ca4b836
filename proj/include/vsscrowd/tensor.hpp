#pragma once

#include <cassert>
#include <cstring>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "vsscrowd/common.hpp"

namespace vsscrowd {

/// Dense row-major tensor of doubles with an optional gradient buffer.
/// Copies are shallow (shared storage); forward ops always allocate fresh
/// outputs, so a tensor's values are stable once an op has produced it.
class Tensor {
  struct Node {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
  };

 public:
  Tensor() : node_(std::make_shared<Node>()) {}

  explicit Tensor(std::vector<int64_t> shape) : node_(std::make_shared<Node>()) {
    node_->shape = std::move(shape);
    node_->data.assign(static_cast<size_t>(numel_of(node_->shape)), 0.0);
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.node_->data) v = value;
    return t;
  }

  static Tensor scalar(double value) {
    Tensor t({1});
    t.node_->data[0] = value;
    return t;
  }

  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> values) {
    Tensor t;
    int64_t n = numel_of(shape);
    if (n != static_cast<int64_t>(values.size()))
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_to_string(shape));
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    return t;
  }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.node_->data) v = rng.normal(0.0, stddev);
    return t;
  }

  const std::vector<int64_t>& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  size_t ndim() const { return node_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  std::vector<double>& values() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor with numel " + std::to_string(numel()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }

  // Allocates (zero-filled) on first touch.
  double* grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad.data();
  }
  const std::vector<double>& grad_values() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::memset(node_->grad.data(), 0, node_->grad.size() * sizeof(double));
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  bool all_finite() const {
    for (double v : node_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_to_string(shape));
      n *= d;
    }
    return n;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Records differentiable operations in execution order. backward() replays
/// them strictly in reverse, so by the time an op's closure runs, the grad of
/// its output has already received every downstream contribution.
///
/// One tape per training step, confined to one thread. Nothing records unless
/// a Tape::Scope is active, so inference and finite-difference replays stay
/// allocation-free.
class Tape {
 public:
  class Scope {
   public:
    explicit Scope(Tape& tape) : prev_(active_) { active_ = &tape; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static bool recording() { return active_ != nullptr; }

  static void record(std::function<void()> backward_fn) {
    assert(active_ != nullptr);
    active_->ops_.push_back(std::move(backward_fn));
  }

  size_t size() const { return ops_.size(); }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. Gradients
  // accumulate; callers zero leaves between steps.
  void backward(Tensor root) {
    if (root.numel() != 1) throw DimensionError("backward root must be scalar");
    if (swept_) throw ParameterError("backward already ran on this tape");
    swept_ = true;
    root.grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() {
    ops_.clear();
    swept_ = false;
  }

 private:
  std::vector<std::function<void()>> ops_;
  bool swept_ = false;
  inline static thread_local Tape* active_ = nullptr;
};

namespace detail {

// Output of a recorded op: marked for grad whenever it will sit on a
// recorded path.
inline void mark_output(Tensor& out, bool any_input_needs_grad) {
  if (Tape::recording() && any_input_needs_grad) out.set_requires_grad(true);
}

inline bool should_record(std::initializer_list<const Tensor*> ins) {
  if (!Tape::recording()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

}  // namespace vsscrowd
