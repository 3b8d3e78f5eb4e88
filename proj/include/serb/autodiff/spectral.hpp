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

#include <cmath>
#include <span>
#include <vector>

#include "serb/autodiff/tensor.hpp"
#include "serb/signal/stft.hpp"

namespace serb::ad {

/// Differentiable STFT of a waveform x[L] into stacked RI planes [2, T, F].
template <class Real>
Tensor<Real> stft(const Tensor<Real>& x, const signal::StftConfig& cfg) {
  if (x.rank() != 1 || x.size() == 0) throw ShapeError("stft: expected a non-empty [L] waveform");
  cfg.validate();
  const std::size_t frames = cfg.num_frames(x.size());
  const std::size_t bins = cfg.num_bins();
  const std::size_t plane = frames * bins;
  Buffer<Real> v(2 * plane);
  signal::stft_kernel<Real>(x.values(), cfg, std::span<Real>(v.data(), plane),
                            std::span<Real>(v.data() + plane, plane));
  bool rec = false;
  auto out = detail::make_output(Shape{2, frames, bins}, std::move(v), "stft", {&x}, rec);
  if (rec) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on, cfg, plane] {
      Real* gx = detail::grad_sink(xn);
      signal::stft_adjoint<Real>(std::span<const Real>(on->grad.data(), plane),
                                 std::span<const Real>(on->grad.data() + plane, plane), cfg,
                                 std::span<Real>(gx, xn->value.size()));
    });
  }
  return out;
}

/// Differentiable inverse STFT of stacked RI planes [2, T, F] into target_len samples.
template <class Real>
Tensor<Real> istft(const Tensor<Real>& ri, const signal::StftConfig& cfg, std::size_t target_len) {
  if (ri.rank() != 3 || ri.dim(0) != 2 || ri.dim(2) != cfg.num_bins()) {
    throw ShapeError("istft: expected [2, T, " + std::to_string(cfg.num_bins()) + "], got " +
                     to_string(ri.shape()));
  }
  const std::size_t frames = ri.dim(1);
  const std::size_t plane = frames * cfg.num_bins();
  Buffer<Real> v(target_len, Real(0));
  signal::istft_kernel<Real>(std::span<const Real>(ri.values().data(), plane),
                             std::span<const Real>(ri.values().data() + plane, plane), frames, cfg, v);
  bool rec = false;
  auto out = detail::make_output(Shape{target_len}, std::move(v), "istft", {&ri}, rec);
  if (rec) {
    auto rn = ri.node(), on = out.node();
    detail::record(out, [rn, on, cfg, frames, plane] {
      Real* g = detail::grad_sink(rn);
      signal::istft_adjoint<Real>(on->grad, frames, cfg, std::span<Real>(g, plane),
                                  std::span<Real>(g + plane, plane));
    });
  }
  return out;
}

/// |X| of stacked RI planes [2, T, F] -> [T, F]. The gradient is taken as
/// zero where the magnitude vanishes.
template <class Real>
Tensor<Real> ri_magnitude(const Tensor<Real>& ri) {
  if (ri.rank() != 3 || ri.dim(0) != 2) throw ShapeError("ri_magnitude: expected [2, T, F]");
  const std::size_t plane = ri.dim(1) * ri.dim(2);
  Buffer<Real> v(plane);
  const Real* re = ri.values().data();
  const Real* im = re + plane;
  for (std::size_t i = 0; i < plane; ++i) v[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
  bool rec = false;
  auto out = detail::make_output(Shape{ri.dim(1), ri.dim(2)}, std::move(v), "ri_magnitude", {&ri}, rec);
  if (rec) {
    auto rn = ri.node(), on = out.node();
    detail::record(out, [rn, on, plane] {
      Real* g = detail::grad_sink(rn);
      const Real* re = rn->value.data();
      const Real* im = re + plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const Real m = on->value[i];
        if (m == Real(0)) continue;
        g[i] += on->grad[i] * re[i] / m;
        g[plane + i] += on->grad[i] * im[i] / m;
      }
    });
  }
  return out;
}

}  // namespace serb::ad
