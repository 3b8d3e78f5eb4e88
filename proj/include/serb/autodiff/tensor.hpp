// Copyright 2026 The SERB Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "serb/error.hpp"

namespace serb::ad {

using Shape = std::vector<std::size_t>;

/// Tensor storage. Aligned so that vectorized reductions see the same
/// alignment on every run and results do not depend on heap addresses.
template <class Real>
using Buffer = std::vector<Real, Eigen::aligned_allocator<Real>>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class Real>
struct Node {
  Shape shape;
  Buffer<Real> value;
  Buffer<Real> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t tape_id = 0;
  std::string name;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

template <class Real>
class Tape;

namespace detail {
template <class Real>
Tape<Real>*& active_tape() {
  thread_local Tape<Real>* tape = nullptr;
  return tape;
}
inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

/// Dense row-major tensor handle. Copies share storage.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0)) : node_(std::make_shared<Node<Real>>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, const std::vector<Real>& values)
      : Tensor(std::move(shape), Buffer<Real>(values.begin(), values.end())) {}

  Tensor(Shape shape, Buffer<Real> values) : node_(std::make_shared<Node<Real>>()) {
    if (values.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  /// Trainable leaf whose gradient buffer starts at zero.
  static Tensor parameter(Shape shape, const std::vector<Real>& values, std::string name) {
    return parameter(std::move(shape), Buffer<Real>(values.begin(), values.end()), std::move(name));
  }

  static Tensor parameter(Shape shape, Buffer<Real> values, std::string name) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    t.node_->ensure_grad();
    return t;
  }

  static Tensor scalar(Real v) { return Tensor(Shape{}, Buffer<Real>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  const std::string& name() const { return node_->name; }

  std::span<const Real> values() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (optimizer updates, loading).
  std::span<Real> mutable_values() { return node_->value; }
  const Buffer<Real>& vec() const { return node_->value; }
  Real item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  Real operator[](std::size_t i) const { return node_->value[i]; }

  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() {
    if (node_->requires_grad) {
      node_->grad.assign(node_->value.size(), Real(0));
    } else {
      node_->grad.clear();
    }
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
  }

  Tensor clone() const {
    Tensor t(shape(), node_->value);
    t.node_->name = node_->name;
    return t;
  }

  const std::shared_ptr<Node<Real>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

/// Constant view of x cut off from the tape (stop-gradient).
template <class Real>
Tensor<Real> detach(const Tensor<Real>& x) {
  return Tensor<Real>(x.shape(), x.vec());
}

/// Ordered record of differentiable operations. backward() replays the
/// recorded closures in exact reverse order.
template <class Real>
class Tape {
 public:
  Tape() : id_(detail::next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }

  void record(std::shared_ptr<Node<Real>> output, std::function<void()> backward_fn) {
    output->tape_id = id_;
    output->leaf = false;
    entries_.push_back({std::move(output), std::move(backward_fn)});
  }

  /// Seeds d(loss)/d(loss) = 1 for a scalar loss and propagates.
  void backward(const Tensor<Real>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backward: loss must be a scalar");
    }
    const std::vector<Real> seed{Real(1)};
    backward(loss, seed);
  }

  /// Propagates an explicit upstream gradient for `output`.
  void backward(const Tensor<Real>& output, std::span<const Real> seed) {
    if (entries_.empty() || !output.defined() || output.node()->tape_id != id_) {
      throw Error("backward: tensor was not produced by a forward pass on this tape");
    }
    if (seed.size() != output.size()) throw ShapeError("backward: seed shape mismatch");
    for (auto& e : entries_) e.output->grad.clear();
    auto& g = output.node()->grad;
    g.assign(seed.begin(), seed.end());
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward_fn();
    }
  }

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<Node<Real>> output;
    std::function<void()> backward_fn;
  };
  std::uint64_t id_;
  std::vector<Entry> entries_;
};

/// Makes `tape` the recording target for the current thread while alive.
template <class Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape) : previous_(detail::active_tape<Real>()) {
    detail::active_tape<Real>() = &tape;
  }
  ~TapeScope() { detail::active_tape<Real>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* previous_;
};

/// Suspends recording for the current thread while alive.
template <class Real>
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape<Real>()) { detail::active_tape<Real>() = nullptr; }
  ~NoGradScope() { detail::active_tape<Real>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Real>* previous_;
};

namespace detail {

template <class Real>
void check_finite(const Buffer<Real>& v, const char* op) {
  for (const Real x : v) {
    if (!std::isfinite(x)) throw NumericalError(std::string(op) + ": non-finite value in output");
  }
}

/// Wraps freshly computed values as an op output. Returns true in `record`
/// when a backward closure must be registered.
template <class Real>
Tensor<Real> make_output(Shape shape, Buffer<Real> values, const char* op,
                         std::initializer_list<const Tensor<Real>*> inputs, bool& record) {
  check_finite(values, op);
  Tensor<Real> out(std::move(shape), std::move(values));
  record = false;
  if (active_tape<Real>() != nullptr) {
    for (const auto* in : inputs) {
      if (in->defined() && in->requires_grad()) {
        record = true;
        break;
      }
    }
  }
  if (record) out.node()->requires_grad = true;
  return out;
}

template <class Real>
void record(const Tensor<Real>& out, std::function<void()> fn) {
  active_tape<Real>()->record(out.node(), std::move(fn));
}

/// Gradient sink for an input: nullptr when the input needs no gradient.
template <class Real>
Real* grad_sink(const std::shared_ptr<Node<Real>>& n) {
  if (!n || !n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

}  // namespace detail
}  // namespace serb::ad
