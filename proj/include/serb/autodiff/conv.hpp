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

#include <array>
#include <optional>
#include <vector>

#include "serb/autodiff/ops.hpp"

namespace serb::ad {

// ---------------------------------------------------------------------------
// 1-D convolution over channels-last sequences [N, L, C]
// ---------------------------------------------------------------------------

namespace detail {

// out[n, l, :] = b + sum_j x[n, l + offsets[j], :] W[j]  (zero outside [0, L))
template <class Real>
Tensor<Real> shifted_conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                            std::vector<std::ptrdiff_t> offsets, const char* op) {
  if (x.rank() != 3 || w.rank() != 3 || w.dim(1) != x.dim(2) || w.dim(0) != offsets.size()) {
    throw ShapeError(std::string(op) + ": x " + to_string(x.shape()) + " incompatible with W " +
                     to_string(w.shape()));
  }
  const std::size_t n = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const std::size_t taps = w.dim(0), cout = w.dim(2);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
    throw ShapeError(std::string(op) + ": bias shape " + to_string(b.shape()));
  }
  const std::size_t rows = n * len, width = taps * cin;

  // Visits every in-range (column row, column offset, source row) triple.
  auto for_each_tap = [n, len, cin, taps, offsets, width](auto&& f) {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t j = 0; j < taps; ++j) {
          const auto src = static_cast<std::ptrdiff_t>(l) + offsets[j];
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          f((s * len + l) * width + j * cin, (s * len + static_cast<std::size_t>(src)) * cin);
        }
      }
    }
  };
  auto im2col = [rows, width, cin, for_each_tap](const Real* src) {
    Buffer<Real> col(rows * width, Real(0));
    for_each_tap([&](std::size_t dst, std::size_t from) {
      std::copy_n(src + from, cin, col.data() + dst);
    });
    return col;
  };

  Buffer<Real> v(rows * cout);
  {
    const auto col = im2col(x.values().data());
    ConstMatMap<Real> X(col.data(), rows, width);
    ConstMatMap<Real> W(w.values().data(), width, cout);
    MatMap<Real> Y(v.data(), rows, cout);
    Y.noalias() = X * W;
    if (b.defined()) {
      Y.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(b.values().data(), cout);
    }
  }
  bool rec = false;
  auto out = make_output(Shape{n, len, cout}, std::move(v), op, {&x, &w, &b}, rec);
  if (rec) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    record(out, [=] {
      ConstMatMap<Real> G(on->grad.data(), rows, cout);
      if (Real* gx = grad_sink(xn)) {
        ConstMatMap<Real> W(wn->value.data(), width, cout);
        RowMatrix<Real> gcol = G * W.transpose();
        for_each_tap([&](std::size_t from, std::size_t dst) {
          for (std::size_t c = 0; c < cin; ++c) gx[dst + c] += gcol.data()[from + c];
        });
      }
      if (Real* gw = grad_sink(wn)) {
        const auto col = im2col(xn->value.data());
        ConstMatMap<Real> X(col.data(), rows, width);
        MatMap<Real>(gw, width, cout).noalias() += X.transpose() * G;
      }
      if (Real* gb = grad_sink(bn)) {
        Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(gb, cout) += G.colwise().sum();
      }
    });
  }
  return out;
}

inline void require_odd_kernel(std::size_t k, const char* op) {
  if (k == 0 || k % 2 == 0) {
    throw ShapeError(std::string(op) + ": kernel size must be odd, got " + std::to_string(k));
  }
}

}  // namespace detail

/// Same-padded dense 1-D convolution along L of x[N, L, C_in] with
/// W[k, C_in, C_out] (cross-correlation, zero padding).
template <class Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    std::size_t dilation = 1) {
  detail::require_odd_kernel(w.rank() == 3 ? w.dim(0) : 0, "conv1d");
  const auto k = static_cast<std::ptrdiff_t>(w.dim(0));
  std::vector<std::ptrdiff_t> offsets;
  for (std::ptrdiff_t j = 0; j < k; ++j) {
    offsets.push_back((j - k / 2) * static_cast<std::ptrdiff_t>(dilation));
  }
  return detail::shifted_conv1d(x, w, b, std::move(offsets), "conv1d");
}

/// Stride-1 transposed counterpart of conv1d with the same geometry: the
/// linear part is the adjoint of conv1d when the channel axes of W are swapped.
template <class Real>
Tensor<Real> deconv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                      std::size_t dilation = 1) {
  detail::require_odd_kernel(w.rank() == 3 ? w.dim(0) : 0, "deconv1d");
  const auto k = static_cast<std::ptrdiff_t>(w.dim(0));
  std::vector<std::ptrdiff_t> offsets;
  for (std::ptrdiff_t j = 0; j < k; ++j) {
    offsets.push_back((k / 2 - j) * static_cast<std::ptrdiff_t>(dilation));
  }
  return detail::shifted_conv1d(x, w, b, std::move(offsets), "deconv1d");
}

enum class Axis { kTime, kFrequency };

/// 1-D convolution of a C x T x F feature along one of its trailing axes,
/// batching over the other. W is [k, C_in, C_out].
template <class Real>
Tensor<Real> conv1d_along_axis(const Tensor<Real>& x, Axis axis, const Tensor<Real>& w,
                               const Tensor<Real>& b, std::size_t dilation = 1) {
  if (x.rank() != 3) throw ShapeError("conv1d_along_axis: expected C x T x F input");
  if (axis == Axis::kFrequency) {
    auto seq = permute(x, {1, 2, 0});  // T, F, C
    return permute(conv1d(seq, w, b, dilation), {2, 0, 1});
  }
  auto seq = permute(x, {2, 1, 0});  // F, T, C
  return permute(conv1d(seq, w, b, dilation), {2, 1, 0});
}

// ---------------------------------------------------------------------------
// 2-D convolution over channel-first features [C, T, F]
// ---------------------------------------------------------------------------

struct Conv2dGeometry {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> dilation{1, 1};
  std::array<std::size_t, 2> padding{0, 0};

  /// Padding that preserves T and F at stride 1 for an odd kernel.
  static Conv2dGeometry same(std::size_t kt, std::size_t kf, std::size_t dil_t = 1,
                             std::size_t dil_f = 1) {
    Conv2dGeometry g;
    g.dilation = {dil_t, dil_f};
    g.padding = {dil_t * (kt - 1) / 2, dil_f * (kf - 1) / 2};
    return g;
  }
};

namespace detail {

struct Conv2dDims {
  std::size_t cin, tin, fin, cout, tout, fout, kt, kf;
};

inline std::ptrdiff_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t d,
                                   std::size_t p) {
  const auto span = static_cast<std::ptrdiff_t>(d * (k - 1) + 1);
  const auto padded = static_cast<std::ptrdiff_t>(in + 2 * p);
  if (padded < span) return 0;
  return (padded - span) / static_cast<std::ptrdiff_t>(s) + 1;
}

// Enumerates the (input row, output row) pairs and the contiguous frequency
// runs touched by kernel tap (i, j). f(ti, to, fi0, fo0, count, fstride).
template <class F>
void conv2d_taps(const Conv2dDims& d, const Conv2dGeometry& g, std::size_t i, std::size_t j,
                 F&& f) {
  const auto st = static_cast<std::ptrdiff_t>(g.stride[0]);
  const auto sf = static_cast<std::ptrdiff_t>(g.stride[1]);
  const auto off_t = static_cast<std::ptrdiff_t>(i * g.dilation[0]) - static_cast<std::ptrdiff_t>(g.padding[0]);
  const auto off_f = static_cast<std::ptrdiff_t>(j * g.dilation[1]) - static_cast<std::ptrdiff_t>(g.padding[1]);
  // fi = fo * sf + off_f must lie in [0, fin)
  std::ptrdiff_t fo_lo = off_f >= 0 ? 0 : (-off_f + sf - 1) / sf;
  std::ptrdiff_t fo_hi = static_cast<std::ptrdiff_t>(d.fout) - 1;
  const auto fo_max = (static_cast<std::ptrdiff_t>(d.fin) - 1 - off_f);
  if (fo_max < 0) return;
  fo_hi = std::min(fo_hi, fo_max / sf);
  if (fo_hi < fo_lo) return;
  for (std::size_t to = 0; to < d.tout; ++to) {
    const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to) * st + off_t;
    if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(d.tin)) continue;
    f(static_cast<std::size_t>(ti), to, static_cast<std::size_t>(fo_lo * sf + off_f),
      static_cast<std::size_t>(fo_lo), static_cast<std::size_t>(fo_hi - fo_lo + 1),
      static_cast<std::size_t>(sf));
  }
}

// y[co] += sum W[co, ci, i, j] * x[ci] (shifted)
template <class Real>
void conv2d_forward(const Conv2dDims& d, const Conv2dGeometry& g, const Real* x, const Real* w,
                    Real* y) {
  for (std::size_t co = 0; co < d.cout; ++co) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      for (std::size_t i = 0; i < d.kt; ++i) {
        for (std::size_t j = 0; j < d.kf; ++j) {
          const Real wv = w[((co * d.cin + ci) * d.kt + i) * d.kf + j];
          conv2d_taps(d, g, i, j, [&](std::size_t ti, std::size_t to, std::size_t fi0, std::size_t fo0,
                                      std::size_t count, std::size_t sf) {
            const Real* xs = x + (ci * d.tin + ti) * d.fin + fi0;
            Real* ys = y + (co * d.tout + to) * d.fout + fo0;
            for (std::size_t q = 0; q < count; ++q) ys[q] += wv * xs[q * sf];
          });
        }
      }
    }
  }
}

// x[ci] += sum W[co, ci, i, j] * y[co] (scattered) -- transpose of conv2d_forward
template <class Real>
void conv2d_transpose(const Conv2dDims& d, const Conv2dGeometry& g, const Real* y, const Real* w,
                      Real* x) {
  for (std::size_t co = 0; co < d.cout; ++co) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      for (std::size_t i = 0; i < d.kt; ++i) {
        for (std::size_t j = 0; j < d.kf; ++j) {
          const Real wv = w[((co * d.cin + ci) * d.kt + i) * d.kf + j];
          conv2d_taps(d, g, i, j, [&](std::size_t ti, std::size_t to, std::size_t fi0, std::size_t fo0,
                                      std::size_t count, std::size_t sf) {
            Real* xs = x + (ci * d.tin + ti) * d.fin + fi0;
            const Real* ys = y + (co * d.tout + to) * d.fout + fo0;
            for (std::size_t q = 0; q < count; ++q) xs[q * sf] += wv * ys[q];
          });
        }
      }
    }
  }
}

template <class Real>
void conv2d_weight_grad(const Conv2dDims& d, const Conv2dGeometry& g, const Real* x,
                        const Real* gy, Real* gw) {
  for (std::size_t co = 0; co < d.cout; ++co) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      for (std::size_t i = 0; i < d.kt; ++i) {
        for (std::size_t j = 0; j < d.kf; ++j) {
          Real acc = 0;
          conv2d_taps(d, g, i, j, [&](std::size_t ti, std::size_t to, std::size_t fi0, std::size_t fo0,
                                      std::size_t count, std::size_t sf) {
            const Real* xs = x + (ci * d.tin + ti) * d.fin + fi0;
            const Real* ys = gy + (co * d.tout + to) * d.fout + fo0;
            for (std::size_t q = 0; q < count; ++q) acc += xs[q * sf] * ys[q];
          });
          gw[((co * d.cin + ci) * d.kt + i) * d.kf + j] += acc;
        }
      }
    }
  }
}

template <class Real>
void add_channel_bias(const Real* b, std::size_t c, std::size_t plane, Real* y) {
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t p = 0; p < plane; ++p) y[k * plane + p] += b[k];
  }
}

template <class Real>
void channel_bias_grad(const Real* gy, std::size_t c, std::size_t plane, Real* gb) {
  for (std::size_t k = 0; k < c; ++k) {
    Real acc = 0;
    for (std::size_t p = 0; p < plane; ++p) acc += gy[k * plane + p];
    gb[k] += acc;
  }
}

}  // namespace detail

/// Cross-correlation of x[C_in, T, F] with W[C_out, C_in, k_t, k_f].
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    const Conv2dGeometry& geom) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0)) {
    throw ShapeError("conv2d: x " + to_string(x.shape()) + " incompatible with W " +
                     to_string(w.shape()));
  }
  if (geom.stride[0] == 0 || geom.stride[1] == 0 || geom.dilation[0] == 0 || geom.dilation[1] == 0 ||
      w.dim(2) == 0 || w.dim(3) == 0) {
    throw ShapeError("conv2d: kernel, stride and dilation must be positive");
  }
  const auto tout = detail::conv_out_dim(x.dim(1), w.dim(2), geom.stride[0], geom.dilation[0], geom.padding[0]);
  const auto fout = detail::conv_out_dim(x.dim(2), w.dim(3), geom.stride[1], geom.dilation[1], geom.padding[1]);
  if (tout <= 0 || fout <= 0) throw ShapeError("conv2d: geometry yields non-positive output size");
  const detail::Conv2dDims d{x.dim(0), x.dim(1), x.dim(2), w.dim(0), static_cast<std::size_t>(tout),
                             static_cast<std::size_t>(fout), w.dim(2), w.dim(3)};
  if (b.defined() && (b.rank() != 1 || b.dim(0) != d.cout)) throw ShapeError("conv2d: bias shape");
  Buffer<Real> v(d.cout * d.tout * d.fout, Real(0));
  detail::conv2d_forward(d, geom, x.values().data(), w.values().data(), v.data());
  if (b.defined()) detail::add_channel_bias(b.values().data(), d.cout, d.tout * d.fout, v.data());
  bool rec = false;
  auto out = detail::make_output(Shape{d.cout, d.tout, d.fout}, std::move(v), "conv2d", {&x, &w, &b}, rec);
  if (rec) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    detail::record(out, [=] {
      if (Real* gx = detail::grad_sink(xn)) detail::conv2d_transpose(d, geom, on->grad.data(), wn->value.data(), gx);
      if (Real* gw = detail::grad_sink(wn)) detail::conv2d_weight_grad(d, geom, xn->value.data(), on->grad.data(), gw);
      if (Real* gb = detail::grad_sink(bn)) detail::channel_bias_grad(on->grad.data(), d.cout, d.tout * d.fout, gb);
    });
  }
  return out;
}

/// Transposed convolution: the adjoint of conv2d for the same W and geometry,
/// mapping y[C_y, T', F'] to [C_x, T, F] where W is [C_y, C_x, k_t, k_f].
/// output_size selects (T, F) when several sizes map onto (T', F').
template <class Real>
Tensor<Real> deconv2d(const Tensor<Real>& y, const Tensor<Real>& w, const Tensor<Real>& b,
                      const Conv2dGeometry& geom,
                      std::optional<std::array<std::size_t, 2>> output_size = std::nullopt) {
  if (y.rank() != 3 || w.rank() != 4 || w.dim(0) != y.dim(0)) {
    throw ShapeError("deconv2d: y " + to_string(y.shape()) + " incompatible with W " +
                     to_string(w.shape()));
  }
  std::array<std::size_t, 2> size{};
  if (output_size) {
    size = *output_size;
  } else {
    for (int a = 0; a < 2; ++a) {
      const auto full = static_cast<std::ptrdiff_t>((y.dim(1 + a) - 1) * geom.stride[a] +
                                                    geom.dilation[a] * (w.dim(2 + a) - 1) + 1) -
                        static_cast<std::ptrdiff_t>(2 * geom.padding[a]);
      if (full <= 0) throw ShapeError("deconv2d: geometry yields non-positive output size");
      size[a] = static_cast<std::size_t>(full);
    }
  }
  for (int a = 0; a < 2; ++a) {
    if (detail::conv_out_dim(size[a], w.dim(2 + a), geom.stride[a], geom.dilation[a], geom.padding[a]) !=
        static_cast<std::ptrdiff_t>(y.dim(1 + a))) {
      throw ShapeError("deconv2d: output size inconsistent with geometry");
    }
  }
  const detail::Conv2dDims d{w.dim(1), size[0], size[1], w.dim(0), y.dim(1), y.dim(2), w.dim(2), w.dim(3)};
  if (b.defined() && (b.rank() != 1 || b.dim(0) != d.cin)) throw ShapeError("deconv2d: bias shape");
  Buffer<Real> v(d.cin * d.tin * d.fin, Real(0));
  detail::conv2d_transpose(d, geom, y.values().data(), w.values().data(), v.data());
  if (b.defined()) detail::add_channel_bias(b.values().data(), d.cin, d.tin * d.fin, v.data());
  bool rec = false;
  auto out = detail::make_output(Shape{d.cin, d.tin, d.fin}, std::move(v), "deconv2d", {&y, &w, &b}, rec);
  if (rec) {
    auto yn = y.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    detail::record(out, [=] {
      if (Real* gy = detail::grad_sink(yn)) detail::conv2d_forward(d, geom, on->grad.data(), wn->value.data(), gy);
      if (Real* gw = detail::grad_sink(wn)) detail::conv2d_weight_grad(d, geom, on->grad.data(), yn->value.data(), gw);
      if (Real* gb = detail::grad_sink(bn)) detail::channel_bias_grad(on->grad.data(), d.cin, d.tin * d.fin, gb);
    });
  }
  return out;
}

}  // namespace serb::ad
