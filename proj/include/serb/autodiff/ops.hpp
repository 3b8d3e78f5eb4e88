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

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "serb/autodiff/tensor.hpp"

namespace serb::ad {

template <class Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatMap = Eigen::Map<RowMatrix<Real>>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>>;

namespace detail {

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Shared pattern for binary elementwise ops: f computes the value, df returns
// (d/da, d/db) given (a, b).
template <class Real, class F, class DF>
Tensor<Real> binary_elementwise(const Tensor<Real>& a, const Tensor<Real>& b, const char* op, F f,
                                DF df) {
  require_same_shape(a, b, op);
  Buffer<Real> v(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i], bv[i]);
  bool rec = false;
  auto out = make_output(a.shape(), std::move(v), op, {&a, &b}, rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    record(out, [an, bn, on, df] {
      Real* ga = grad_sink(an);
      Real* gb = grad_sink(bn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const auto [da, db] = df(an->value[i], bn->value[i]);
        if (ga) ga[i] += on->grad[i] * da;
        if (gb) gb[i] += on->grad[i] * db;
      }
    });
  }
  return out;
}

template <class Real, class F, class DF>
Tensor<Real> unary_elementwise(const Tensor<Real>& a, const char* op, F f, DF df) {
  Buffer<Real> v(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i]);
  bool rec = false;
  auto out = make_output(a.shape(), std::move(v), op, {&a}, rec);
  if (rec) {
    auto an = a.node(), on = out.node();
    record(out, [an, on, df] {
      Real* ga = grad_sink(an);
      for (std::size_t i = 0; i < on->grad.size(); ++i) ga[i] += on->grad[i] * df(an->value[i]);
    });
  }
  return out;
}

template <class Real>
Real sigmoid(Real t) {
  return Real(1) / (Real(1) + std::exp(-t));
}

}  // namespace detail

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "add");
  Buffer<Real> v(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  bool rec = false;
  auto out = detail::make_output(a.shape(), std::move(v), "add", {&a, &b}, rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record(out, [an, bn, on] {
      if (Real* ga = detail::grad_sink(an)) {
        for (std::size_t i = 0; i < on->grad.size(); ++i) ga[i] += on->grad[i];
      }
      if (Real* gb = detail::grad_sink(bn)) {
        for (std::size_t i = 0; i < on->grad.size(); ++i) gb[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary_elementwise(
      a, b, "sub", [](Real x, Real y) { return x - y; },
      [](Real, Real) { return std::array<Real, 2>{Real(1), Real(-1)}; });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary_elementwise(
      a, b, "mul", [](Real x, Real y) { return x * y; },
      [](Real x, Real y) { return std::array<Real, 2>{y, x}; });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  return detail::unary_elementwise(
      a, "scale", [s](Real x) { return x * s; }, [s](Real) { return s; });
}

/// |x| with the subgradient 0 at x == 0.
template <class Real>
Tensor<Real> abs(const Tensor<Real>& a) {
  return detail::unary_elementwise(
      a, "abs", [](Real x) { return std::abs(x); },
      [](Real x) { return x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)); });
}

template <class Real>
Tensor<Real> square(const Tensor<Real>& a) {
  return detail::unary_elementwise(
      a, "square", [](Real x) { return x * x; }, [](Real x) { return Real(2) * x; });
}

/// swish(t) = t * sigmoid(t)
template <class Real>
Tensor<Real> swish(const Tensor<Real>& a) {
  return detail::unary_elementwise(
      a, "swish", [](Real x) { return x * detail::sigmoid(x); },
      [](Real x) {
        const Real s = detail::sigmoid(x);
        return s * (Real(1) + x * (Real(1) - s));
      });
}

/// swish(a) * b
template <class Real>
Tensor<Real> swiglu_gate(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary_elementwise(
      a, b, "swiglu_gate", [](Real x, Real y) { return x * detail::sigmoid(x) * y; },
      [](Real x, Real y) {
        const Real s = detail::sigmoid(x);
        return std::array<Real, 2>{y * s * (Real(1) + x * (Real(1) - s)), x * s};
      });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real acc = 0;
  for (Real x : a.values()) acc += x;
  bool rec = false;
  auto out = detail::make_output(Shape{}, Buffer<Real>{acc}, "sum", {&a}, rec);
  if (rec) {
    auto an = a.node(), on = out.node();
    detail::record(out, [an, on] {
      Real* ga = detail::grad_sink(an);
      const Real g = on->grad[0];
      for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.size()));
}

/// Same data, new shape.
template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  bool rec = false;
  auto out = detail::make_output(std::move(shape), a.vec(), "reshape", {&a}, rec);
  if (rec) {
    auto an = a.node(), on = out.node();
    detail::record(out, [an, on] {
      Real* ga = detail::grad_sink(an);
      for (std::size_t i = 0; i < on->grad.size(); ++i) ga[i] += on->grad[i];
    });
  }
  return out;
}

/// Rank-3 axis permutation: out.dim(i) == x.dim(perm[i]).
template <class Real>
Tensor<Real> permute(const Tensor<Real>& x, std::array<std::size_t, 3> perm) {
  if (x.rank() != 3) throw ShapeError("permute: expected rank 3, got " + to_string(x.shape()));
  const std::array<std::size_t, 3> in{x.dim(0), x.dim(1), x.dim(2)};
  const std::array<std::size_t, 3> in_stride{in[1] * in[2], in[2], 1};
  const Shape out_shape{in[perm[0]], in[perm[1]], in[perm[2]]};
  const std::array<std::size_t, 3> s{in_stride[perm[0]], in_stride[perm[1]], in_stride[perm[2]]};
  // visits (output offset, input offset) pairs in output order
  auto visit = [out_shape, s](auto&& f) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < out_shape[0]; ++i) {
      for (std::size_t j = 0; j < out_shape[1]; ++j) {
        const std::size_t base = i * s[0] + j * s[1];
        for (std::size_t k = 0; k < out_shape[2]; ++k, ++o) f(o, base + k * s[2]);
      }
    }
  };
  Buffer<Real> v(x.size());
  const Real* src = x.values().data();
  visit([&](std::size_t o, std::size_t i) { v[o] = src[i]; });
  bool rec = false;
  auto out = detail::make_output(out_shape, std::move(v), "permute", {&x}, rec);
  if (rec) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on, visit] {
      Real* gx = detail::grad_sink(xn);
      const Real* go = on->grad.data();
      visit([&](std::size_t o, std::size_t i) { gx[i] += go[o]; });
    });
  }
  return out;
}

/// Columns [begin, end) of the last axis.
template <class Real>
Tensor<Real> slice_last(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  const std::size_t width = x.shape().back();
  if (begin >= end || end > width) throw ShapeError("slice_last: bad range");
  const std::size_t rows = x.size() / width;
  const std::size_t w = end - begin;
  Shape shape = x.shape();
  shape.back() = w;
  Buffer<Real> v(rows * w);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * width + begin, w, v.data() + r * w);
  }
  bool rec = false;
  auto out = detail::make_output(std::move(shape), std::move(v), "slice_last", {&x}, rec);
  if (rec) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on, rows, width, begin, w] {
      Real* gx = detail::grad_sink(xn);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) gx[r * width + begin + c] += on->grad[r * w + c];
      }
    });
  }
  return out;
}

/// Concatenation along axis 0 (e.g. channel stacking of C x T x F features).
template <class Real>
Tensor<Real> concat0(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape shape = parts[0].shape();
  std::size_t lead = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat0: trailing dims differ");
    }
    lead += p.dim(0);
  }
  shape[0] = lead;
  Buffer<Real> v;
  v.reserve(numel(shape));
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  detail::check_finite(v, "concat0");
  Tensor<Real> out(std::move(shape), std::move(v));
  bool rec = false;
  if (detail::active_tape<Real>() != nullptr) {
    for (const auto& p : parts) rec = rec || p.requires_grad();
  }
  if (rec) {
    out.node()->requires_grad = true;
    std::vector<std::shared_ptr<Node<Real>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    detail::record(out, [nodes, on] {
      std::size_t offset = 0;
      for (const auto& n : nodes) {
        if (Real* g = detail::grad_sink(n)) {
          for (std::size_t i = 0; i < n->value.size(); ++i) g[i] += on->grad[offset + i];
        }
        offset += n->value.size();
      }
    });
  }
  return out;
}

/// Affine map over the last axis: y = x W + b, W is [D_in, D_out].
template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: x " + to_string(x.shape()) + " incompatible with W " +
                     to_string(w.shape()));
  }
  const std::size_t din = w.dim(0), dout = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != dout)) {
    throw ShapeError("linear: bias shape " + to_string(b.shape()));
  }
  const std::size_t rows = x.size() / din;
  Shape shape = x.shape();
  shape.back() = dout;
  Buffer<Real> v(rows * dout);
  {
    ConstMatMap<Real> X(x.values().data(), rows, din);
    ConstMatMap<Real> W(w.values().data(), din, dout);
    MatMap<Real> Y(v.data(), rows, dout);
    Y.noalias() = X * W;
    if (b.defined()) {
      Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> B(b.values().data(), dout);
      Y.rowwise() += B;
    }
  }
  bool rec = false;
  auto out = detail::make_output(std::move(shape), std::move(v), "linear", {&x, &w, &b}, rec);
  if (rec) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    detail::record(out, [xn, wn, bn, on, rows, din, dout] {
      ConstMatMap<Real> G(on->grad.data(), rows, dout);
      if (Real* gx = detail::grad_sink(xn)) {
        ConstMatMap<Real> W(wn->value.data(), din, dout);
        MatMap<Real>(gx, rows, din).noalias() += G * W.transpose();
      }
      if (Real* gw = detail::grad_sink(wn)) {
        ConstMatMap<Real> X(xn->value.data(), rows, din);
        MatMap<Real>(gw, din, dout).noalias() += X.transpose() * G;
      }
      if (Real* gb = detail::grad_sink(bn)) {
        Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(gb, dout) += G.colwise().sum();
      }
    });
  }
  return out;
}

inline constexpr double kNormEpsilon = 1e-8;

/// Root-mean-square normalization over the last (channel) axis, times gain.
template <class Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& gain) {
  const std::size_t c = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != c) {
    throw ShapeError("rms_norm: gain " + to_string(gain.shape()) + " vs x " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / c;
  Buffer<Real> v(x.size());
  Buffer<Real> inv_rms(rows);
  const auto xv = x.values();
  const auto gv = gain.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv.data() + r * c;
    Real ms = 0;
    for (std::size_t j = 0; j < c; ++j) ms += row[j] * row[j];
    ms /= static_cast<Real>(c);
    const Real inv = Real(1) / std::sqrt(ms + static_cast<Real>(kNormEpsilon));
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < c; ++j) v[r * c + j] = row[j] * inv * gv[j];
  }
  bool rec = false;
  auto out = detail::make_output(x.shape(), std::move(v), "rms_norm", {&x, &gain}, rec);
  if (rec) {
    auto xn = x.node(), gn = gain.node(), on = out.node();
    detail::record(out, [xn, gn, on, rows, c, inv_rms = std::move(inv_rms)] {
      Real* gx = detail::grad_sink(xn);
      Real* gg = detail::grad_sink(gn);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xn->value.data() + r * c;
        const Real* go = on->grad.data() + r * c;
        const Real inv = inv_rms[r];
        if (gg) {
          for (std::size_t j = 0; j < c; ++j) gg[j] += go[j] * row[j] * inv;
        }
        if (gx) {
          // y_j = x_j * inv * g_j ; d inv / d x_k = -inv^3 x_k / c
          Real dot = 0;
          for (std::size_t j = 0; j < c; ++j) dot += go[j] * gn->value[j] * row[j];
          const Real coef = dot * inv * inv * inv / static_cast<Real>(c);
          for (std::size_t j = 0; j < c; ++j) {
            gx[r * c + j] += go[j] * gn->value[j] * inv - coef * row[j];
          }
        }
      }
    });
  }
  return out;
}

/// Elementwise complex magnitude sqrt(re^2 + im^2); gradient taken as zero
/// where the magnitude vanishes.
template <class Real>
Tensor<Real> magnitude(const Tensor<Real>& re, const Tensor<Real>& im) {
  return detail::binary_elementwise(
      re, im, "magnitude", [](Real a, Real b) { return std::sqrt(a * a + b * b); },
      [](Real a, Real b) {
        const Real m = std::sqrt(a * a + b * b);
        if (m == Real(0)) return std::array<Real, 2>{Real(0), Real(0)};
        return std::array<Real, 2>{a / m, b / m};
      });
}

}  // namespace serb::ad
