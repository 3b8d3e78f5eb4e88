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
#include <vector>

#include "serb/autodiff/ops.hpp"

namespace serb::ad {

/// Per-head softmax(Q K^T / sqrt(d_head)) V over sequences q, k, v of shape
/// [N, L, C]; heads split the channel axis into C / heads contiguous groups.
/// When `weights` is non-null it receives the attention matrices laid out as
/// [N, heads, L, L].
template <class Real>
Tensor<Real> scaled_dot_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                  std::size_t heads, std::vector<Real>* weights = nullptr) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q/k/v must share a [N, L, C] shape");
  }
  const std::size_t n = q.dim(0), len = q.dim(1), c = q.dim(2);
  if (heads == 0 || c % heads != 0) {
    throw ShapeError("attention: channels " + std::to_string(c) + " not divisible by heads " +
                     std::to_string(heads));
  }
  const std::size_t dh = c / heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  using Strided = Eigen::Map<const RowMatrix<Real>, 0, Eigen::OuterStride<>>;
  using MutStrided = Eigen::Map<RowMatrix<Real>, 0, Eigen::OuterStride<>>;

  Buffer<Real> probs(n * heads * len * len);
  Buffer<Real> out_v(q.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = s * len * c + h * dh;
      Strided Q(q.values().data() + base, len, dh, Eigen::OuterStride<>(c));
      Strided K(k.values().data() + base, len, dh, Eigen::OuterStride<>(c));
      Strided V(v.values().data() + base, len, dh, Eigen::OuterStride<>(c));
      MatMap<Real> P(probs.data() + (s * heads + h) * len * len, len, len);
      P.noalias() = (Q * K.transpose()) * scale;
      for (std::size_t r = 0; r < len; ++r) {
        auto row = P.row(r);
        const Real mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      MutStrided O(out_v.data() + base, len, dh, Eigen::OuterStride<>(c));
      O.noalias() = P * V;
    }
  }
  if (weights) weights->assign(probs.begin(), probs.end());
  bool rec = false;
  auto out = detail::make_output(q.shape(), std::move(out_v), "attention", {&q, &k, &v}, rec);
  if (rec) {
    auto qn = q.node(), kn = k.node(), vn = v.node(), on = out.node();
    detail::record(out, [=, probs = std::move(probs)] {
      Real* gq = detail::grad_sink(qn);
      Real* gk = detail::grad_sink(kn);
      Real* gv = detail::grad_sink(vn);
      RowMatrix<Real> dP(len, len);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t base = s * len * c + h * dh;
          Strided Q(qn->value.data() + base, len, dh, Eigen::OuterStride<>(c));
          Strided K(kn->value.data() + base, len, dh, Eigen::OuterStride<>(c));
          Strided V(vn->value.data() + base, len, dh, Eigen::OuterStride<>(c));
          Strided G(on->grad.data() + base, len, dh, Eigen::OuterStride<>(c));
          ConstMatMap<Real> P(probs.data() + (s * heads + h) * len * len, len, len);
          if (gv) MutStrided(gv + base, len, dh, Eigen::OuterStride<>(c)).noalias() += P.transpose() * G;
          if (!gq && !gk) continue;
          dP.noalias() = G * V.transpose();
          // softmax backward: dS = P o (dP - rowsum(dP o P))
          for (std::size_t r = 0; r < len; ++r) {
            const Real dot = dP.row(r).dot(P.row(r));
            dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix() * scale;
          }
          if (gq) MutStrided(gq + base, len, dh, Eigen::OuterStride<>(c)).noalias() += dP * K;
          if (gk) MutStrided(gk + base, len, dh, Eigen::OuterStride<>(c)).noalias() += dP.transpose() * Q;
        }
      }
    });
  }
  return out;
}

/// Learned projections of a multi-head self-attention layer. Weights are
/// [C, C] (input-major), biases [C].
template <class Real>
struct AttentionParams {
  Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Self-attention over x[N, L, C] (N independent sequences of length L).
template <class Real>
Tensor<Real> multi_head_attention(const Tensor<Real>& x, const AttentionParams<Real>& p,
                                  std::size_t heads, std::vector<Real>* weights = nullptr) {
  if (x.rank() != 3) throw ShapeError("multi_head_attention: expected [N, L, C] input");
  if (heads == 0 || x.dim(2) % heads != 0) {
    throw ShapeError("multi_head_attention: C % heads != 0");
  }
  auto q = linear(x, p.wq, p.bq);
  auto k = linear(x, p.wk, p.bk);
  auto v = linear(x, p.wv, p.bv);
  auto ctx = scaled_dot_attention(q, k, v, heads, weights);
  return linear(ctx, p.wo, p.bo);
}

}  // namespace serb::ad
