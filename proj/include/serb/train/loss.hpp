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

#include <vector>

#include "serb/autodiff/ops.hpp"
#include "serb/autodiff/spectral.hpp"
#include "serb/signal/metrics.hpp"

namespace serb::train {

using ad::Tensor;

struct LossWeights {
  double time_l1 = 1.0;
  double mr_tf_l1 = 1.0;
};

/// Mean absolute sample difference.
template <class Real>
Tensor<Real> loss_time_l1(const Tensor<Real>& est, const Tensor<Real>& ref) {
  if (est.shape() != ref.shape()) {
    throw ShapeError("loss_time_l1: length mismatch " + ad::to_string(est.shape()) + " vs " +
                     ad::to_string(ref.shape()));
  }
  return ad::mean(ad::abs(ad::sub(est, ref)));
}

/// Multi-resolution TF-domain L1: for each window length N (hop N/4), the
/// mean absolute magnitude difference plus the mean absolute RI difference;
/// averaged over resolutions.
template <class Real>
Tensor<Real> loss_mr_tf_l1(const Tensor<Real>& est, const Tensor<Real>& ref,
                           const std::vector<std::size_t>& resolutions = signal::default_resolutions()) {
  if (est.shape() != ref.shape()) throw ShapeError("loss_mr_tf_l1: length mismatch");
  if (resolutions.empty()) throw ConfigError("loss_mr_tf_l1: no resolutions");
  const auto ref_const = ad::detach(ref);
  Tensor<Real> total;
  for (std::size_t win : resolutions) {
    const signal::StftConfig cfg{win, win / 4};
    auto se = ad::stft(est, cfg);
    const auto sr = ad::stft(ref_const, cfg);
    auto mag = ad::mean(ad::abs(ad::sub(ad::ri_magnitude(se), ad::ri_magnitude(sr))));
    auto ri = ad::mean(ad::abs(ad::sub(se, sr)));
    auto term = ad::add(mag, ri);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, Real(1) / static_cast<Real>(resolutions.size()));
}

template <class Real>
Tensor<Real> total_loss(const Tensor<Real>& est, const Tensor<Real>& ref, const LossWeights& w = {},
                        const std::vector<std::size_t>& resolutions = signal::default_resolutions()) {
  auto time = ad::scale(loss_time_l1(est, ref), static_cast<Real>(w.time_l1));
  auto tf = ad::scale(loss_mr_tf_l1(est, ref, resolutions), static_cast<Real>(w.mr_tf_l1));
  return ad::add(time, tf);
}

}  // namespace serb::train
