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
#include <cstdint>
#include <vector>

#include "serb/autodiff/tensor.hpp"

namespace serb::train {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("AdamW: lr must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("AdamW: betas must lie in [0, 1)");
    }
    if (weight_decay < 0.0) throw ConfigError("AdamW: weight_decay must be >= 0");
  }
};

/// First/second moments per parameter tensor and the completed step count.
template <class Real>
struct AdamWState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t step = 0;

  void init(const std::vector<ad::Tensor<Real>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.size(), Real(0));
      v.emplace_back(p.size(), Real(0));
    }
    step = 0;
  }
};

/// One AdamW update using each parameter's accumulated gradient:
///   theta <- theta * (1 - lr * wd)
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// `lr` overrides cfg.lr (schedules pass the scheduled rate).
template <class Real>
void adamw_step(std::vector<ad::Tensor<Real>>& params, AdamWState<Real>& state, const AdamWConfig& cfg,
                double lr) {
  if (state.m.size() != params.size()) state.init(params);
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (Real g : p.grad()) {
      if (!std::isfinite(g)) throw NumericalError("AdamW: non-finite gradient in " + p.name());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto theta = p.mutable_values();
    const auto grad = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size()) throw ShapeError("AdamW: state shape mismatch for " + p.name());
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      double th = static_cast<double>(theta[j]) * decay;
      th -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.epsilon);
      theta[j] = static_cast<Real>(th);
    }
  }
}

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <class Real>
double clip_grad_norm(std::vector<ad::Tensor<Real>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto s = static_cast<Real>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace serb::train
