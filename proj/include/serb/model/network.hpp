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
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "serb/autodiff/attention.hpp"
#include "serb/autodiff/conv.hpp"
#include "serb/autodiff/ops.hpp"
#include "serb/autodiff/spectral.hpp"
#include "serb/model/config.hpp"
#include "serb/signal/metrics.hpp"

namespace serb::model {

using ad::Shape;
using ad::Tensor;

/// Conv-SwiGLU feed-forward: conv1d C -> 2H, swish(first half) * second half,
/// transposed conv1d H -> C.
template <class Real>
struct FeedForwardParams {
  Tensor<Real> norm_gain;
  Tensor<Real> conv_w, conv_b;      // [k, C, 2H], [2H]
  Tensor<Real> deconv_w, deconv_b;  // [k, H, C], [C]
};

/// One macaron unit operating along a single axis.
template <class Real>
struct PathParams {
  FeedForwardParams<Real> ffn_in;
  Tensor<Real> attn_norm_gain;
  ad::AttentionParams<Real> attn;
  FeedForwardParams<Real> ffn_out;
};

template <class Real>
struct BlockParams {
  PathParams<Real> frequency;
  PathParams<Real> time;
};

/// K dilated 3x3 convolutions with dense concatenation, then a 1x1
/// projection of all collected features back to C channels.
template <class Real>
struct DenseStackParams {
  std::vector<Tensor<Real>> conv_w, conv_b;
  Tensor<Real> proj_w, proj_b;
};

/// Decoded output of one block application.
struct StageTrace {
  std::size_t stage = 0;  ///< 1-based index over the B*R block applications
  signal::AudioBuffer waveform;
  std::optional<double> si_sdr_db;
  std::optional<double> spectral_l1;
};

template <class Real>
struct StageResult {
  Tensor<Real> output;
  std::vector<Tensor<Real>> stages;  ///< filled only when tracing
};

/// Shallow convolutional encoder/decoder around B dual-path blocks applied R
/// times. Parameter tensors are shared handles; the model is move-only.
template <class Real>
class EnhancementModel {
 public:
  explicit EnhancementModel(const ModelConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t c = config_.channels, h = config_.hidden, k = config_.kernel;
    const std::size_t ck = kCodecKernel;

    enc_w_ = make_param("encoder.conv.weight", {c, 2, ck, ck}, 2 * ck * ck, rng);
    enc_b_ = make_bias("encoder.conv.bias", c);
    enc_dense_ = make_dense("encoder.dense", rng);

    blocks_.reserve(config_.blocks);
    for (std::size_t b = 0; b < config_.blocks; ++b) {
      const std::string prefix = "blocks." + std::to_string(b);
      BlockParams<Real> block;
      for (auto* path : {&block.frequency, &block.time}) {
        const std::string pp = prefix + (path == &block.frequency ? ".frequency" : ".time");
        path->ffn_in = make_ffn(pp + ".ffn_in", c, h, k, rng);
        path->attn_norm_gain = make_gain(pp + ".attn.norm.gain", c);
        auto& a = path->attn;
        a.wq = make_param(pp + ".attn.q.weight", {c, c}, c, rng);
        a.bq = make_bias(pp + ".attn.q.bias", c);
        a.wk = make_param(pp + ".attn.k.weight", {c, c}, c, rng);
        a.bk = make_bias(pp + ".attn.k.bias", c);
        a.wv = make_param(pp + ".attn.v.weight", {c, c}, c, rng);
        a.bv = make_bias(pp + ".attn.v.bias", c);
        a.wo = make_param(pp + ".attn.o.weight", {c, c}, c, rng);
        a.bo = make_bias(pp + ".attn.o.bias", c);
        path->ffn_out = make_ffn(pp + ".ffn_out", c, h, k, rng);
      }
      blocks_.push_back(std::move(block));
    }

    dec_dense_ = make_dense("decoder.dense", rng);
    dec_w_ = make_param("decoder.deconv.weight", {c, 2, ck, ck}, c * ck * ck, rng);
    dec_b_ = make_bias("decoder.deconv.bias", 2);
  }

  EnhancementModel(EnhancementModel&&) noexcept = default;
  EnhancementModel& operator=(EnhancementModel&&) noexcept = default;
  EnhancementModel(const EnhancementModel&) = delete;
  EnhancementModel& operator=(const EnhancementModel&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Every trainable tensor in registration order.
  const std::vector<Tensor<Real>>& parameters() const { return params_; }
  std::vector<Tensor<Real>>& parameters() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  const BlockParams<Real>& block(std::size_t b) const { return blocks_.at(b); }

  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Stacked RI planes [2, T, F] -> feature [C, T, F].
  Tensor<Real> encode(const Tensor<Real>& ri) const {
    if (ri.rank() != 3 || ri.dim(0) != 2 || ri.dim(2) != config_.stft.num_bins()) {
      throw ShapeError("encode: expected [2, T, " + std::to_string(config_.stft.num_bins()) +
                       "], got " + ad::to_string(ri.shape()));
    }
    auto x = ad::conv2d(ri, enc_w_, enc_b_, ad::Conv2dGeometry::same(kCodecKernel, kCodecKernel));
    return apply_dense(x, enc_dense_);
  }

  /// Frequency path, then time path, on a C x T x F feature.
  Tensor<Real> tf_block(const Tensor<Real>& x, std::size_t b) const {
    check_feature(x, "tf_block");
    const auto& p = blocks_.at(b);
    auto seq = ad::permute(x, {1, 2, 0});  // T sequences of length F
    seq = path_unit(seq, p.frequency);
    seq = ad::permute(seq, {1, 0, 2});  // F sequences of length T
    seq = path_unit(seq, p.time);
    return ad::permute(seq, {2, 1, 0});
  }

  /// Applies the B-block stack R times. DC: y_r = Stack(y_{r-1});
  /// SC: y_r = Stack(y_{r-1}) + x0. With trace set, stages holds the feature
  /// after each of the B*R block applications; the last block of a repeat is
  /// recorded after fusion.
  StageResult<Real> run_stages(const Tensor<Real>& x0, bool trace = false) const {
    check_feature(x0, "run_stages");
    StageResult<Real> result;
    Tensor<Real> y = x0;
    for (std::size_t r = 0; r < config_.repeats; ++r) {
      for (std::size_t b = 0; b < config_.blocks; ++b) {
        y = tf_block(y, b);
        const bool last = b + 1 == config_.blocks;
        if (last && config_.fusion == Fusion::kSummation) y = ad::add(y, x0);
        if (trace) result.stages.push_back(y);
      }
    }
    result.output = y;
    return result;
  }

  /// Feature [C, T, F] -> RI planes [2, T, F].
  Tensor<Real> decode_ri(const Tensor<Real>& y) const {
    check_feature(y, "decode");
    auto z = apply_dense(y, dec_dense_);
    return ad::deconv2d(z, dec_w_, dec_b_, ad::Conv2dGeometry::same(kCodecKernel, kCodecKernel),
                        std::array<std::size_t, 2>{y.dim(1), y.dim(2)});
  }

  Tensor<Real> decode(const Tensor<Real>& y, std::size_t target_len) const {
    return ad::istft(decode_ri(y), config_.stft, target_len);
  }

  /// Differentiable waveform-to-waveform pass.
  Tensor<Real> forward(const Tensor<Real>& noisy) const {
    if (noisy.rank() != 1) throw ShapeError("forward: expected a [L] waveform");
    auto x0 = encode(ad::stft(noisy, config_.stft));
    return decode(run_stages(x0).output, noisy.size());
  }

  signal::AudioBuffer enhance(const signal::AudioBuffer& noisy) const {
    ad::NoGradScope<Real> no_grad;
    return to_audio(forward(to_tensor(noisy)));
  }

  /// Decodes every intermediate stage through the single decoder. Metrics
  /// are filled when a clean reference is given.
  std::vector<StageTrace> probe_stages(const signal::AudioBuffer& noisy,
                                       const signal::AudioBuffer* clean = nullptr) const {
    if (noisy.empty()) throw ShapeError("probe_stages: empty input");
    if (clean && clean->size() != noisy.size()) throw ShapeError("probe_stages: reference length mismatch");
    ad::NoGradScope<Real> no_grad;
    const auto x = to_tensor(noisy);
    auto x0 = encode(ad::stft(x, config_.stft));
    auto result = run_stages(x0, true);
    std::vector<StageTrace> traces;
    for (std::size_t s = 0; s < result.stages.size(); ++s) {
      StageTrace t;
      t.stage = s + 1;
      t.waveform = to_audio(decode(result.stages[s], noisy.size()));
      if (clean) {
        t.si_sdr_db = signal::si_sdr(t.waveform, *clean);
        t.spectral_l1 = signal::spectral_l1_distance(t.waveform, *clean);
      }
      traces.push_back(std::move(t));
    }
    return traces;
  }

  static Tensor<Real> to_tensor(const signal::AudioBuffer& audio) {
    ad::Buffer<Real> v(audio.samples.begin(), audio.samples.end());
    const Shape shape{v.size()};
    return Tensor<Real>(shape, std::move(v));
  }

  static signal::AudioBuffer to_audio(const Tensor<Real>& t) {
    return signal::AudioBuffer(std::vector<double>(t.values().begin(), t.values().end()));
  }

  static Tensor<Real> to_ri(const signal::Spectrogram& spec) {
    ad::Buffer<Real> v;
    v.reserve(spec.real.size() * 2);
    v.insert(v.end(), spec.real.begin(), spec.real.end());
    v.insert(v.end(), spec.imag.begin(), spec.imag.end());
    return Tensor<Real>(Shape{2, spec.num_frames, spec.num_bins}, std::move(v));
  }

 private:
  void check_feature(const Tensor<Real>& x, const char* op) const {
    if (x.rank() != 3 || x.dim(0) != config_.channels || x.dim(2) != config_.stft.num_bins()) {
      throw ShapeError(std::string(op) + ": expected [" + std::to_string(config_.channels) + ", T, " +
                       std::to_string(config_.stft.num_bins()) + "], got " + ad::to_string(x.shape()));
    }
  }

  Tensor<Real> feed_forward(const Tensor<Real>& z, const FeedForwardParams<Real>& p) const {
    const std::size_t h = config_.hidden;
    auto u = ad::rms_norm(z, p.norm_gain);
    auto expanded = ad::conv1d(u, p.conv_w, p.conv_b);
    auto gated = ad::swiglu_gate(ad::slice_last(expanded, 0, h), ad::slice_last(expanded, h, 2 * h));
    return ad::deconv1d(gated, p.deconv_w, p.deconv_b);
  }

  // Macaron unit on [N, L, C]: half FFN, self-attention, half FFN, each
  // pre-normalized with a residual connection.
  Tensor<Real> path_unit(const Tensor<Real>& z0, const PathParams<Real>& p) const {
    auto z = ad::add(z0, ad::scale(feed_forward(z0, p.ffn_in), Real(0.5)));
    z = ad::add(z, ad::multi_head_attention(ad::rms_norm(z, p.attn_norm_gain), p.attn, config_.heads));
    return ad::add(z, ad::scale(feed_forward(z, p.ffn_out), Real(0.5)));
  }

  Tensor<Real> apply_dense(const Tensor<Real>& x, const DenseStackParams<Real>& d) const {
    if (config_.dense_depth == 0) return x;
    std::vector<Tensor<Real>> features{x};
    for (std::size_t i = 0; i < config_.dense_depth; ++i) {
      const auto geom = ad::Conv2dGeometry::same(kCodecKernel, kCodecKernel, std::size_t{1} << i, 1);
      features.push_back(ad::swish(ad::conv2d(ad::concat0(features), d.conv_w[i], d.conv_b[i], geom)));
    }
    return ad::conv2d(ad::concat0(features), d.proj_w, d.proj_b, ad::Conv2dGeometry{});
  }

  Tensor<Real> make_param(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<Real> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<Real>(dist(rng));
    return push(Tensor<Real>::parameter(std::move(shape), std::move(v), name));
  }

  Tensor<Real> make_bias(const std::string& name, std::size_t n) {
    return push(Tensor<Real>::parameter({n}, std::vector<Real>(n, Real(0)), name));
  }

  Tensor<Real> make_gain(const std::string& name, std::size_t n) {
    return push(Tensor<Real>::parameter({n}, std::vector<Real>(n, Real(1)), name));
  }

  FeedForwardParams<Real> make_ffn(const std::string& prefix, std::size_t c, std::size_t h, std::size_t k,
                                   std::mt19937_64& rng) {
    FeedForwardParams<Real> f;
    f.norm_gain = make_gain(prefix + ".norm.gain", c);
    f.conv_w = make_param(prefix + ".conv.weight", {k, c, 2 * h}, k * c, rng);
    f.conv_b = make_bias(prefix + ".conv.bias", 2 * h);
    f.deconv_w = make_param(prefix + ".deconv.weight", {k, h, c}, k * h, rng);
    f.deconv_b = make_bias(prefix + ".deconv.bias", c);
    return f;
  }

  DenseStackParams<Real> make_dense(const std::string& prefix, std::mt19937_64& rng) {
    DenseStackParams<Real> d;
    const std::size_t c = config_.channels, ck = kCodecKernel, depth = config_.dense_depth;
    if (depth == 0) return d;
    for (std::size_t i = 0; i < depth; ++i) {
      const std::string name = prefix + "." + std::to_string(i);
      d.conv_w.push_back(make_param(name + ".weight", {c, c * (i + 1), ck, ck}, c * (i + 1) * ck * ck, rng));
      d.conv_b.push_back(make_bias(name + ".bias", c));
    }
    d.proj_w = make_param(prefix + ".proj.weight", {c, c * (depth + 1), 1, 1}, c * (depth + 1), rng);
    d.proj_b = make_bias(prefix + ".proj.bias", c);
    return d;
  }

  Tensor<Real> push(Tensor<Real> t) {
    params_.push_back(t);
    return t;
  }

  ModelConfig config_;
  std::vector<Tensor<Real>> params_;
  Tensor<Real> enc_w_, enc_b_;
  DenseStackParams<Real> enc_dense_;
  std::vector<BlockParams<Real>> blocks_;
  DenseStackParams<Real> dec_dense_;
  Tensor<Real> dec_w_, dec_b_;
};

// Free-function forms of the pipeline stages.

template <class Real>
Tensor<Real> encode(const signal::Spectrogram& noisy, const EnhancementModel<Real>& model) {
  if (!(noisy.config == model.config().stft)) throw ShapeError("encode: spectrogram STFT config differs from model");
  return model.encode(EnhancementModel<Real>::to_ri(noisy));
}

template <class Real>
signal::AudioBuffer decode(const Tensor<Real>& y, const EnhancementModel<Real>& model, std::size_t target_len) {
  ad::NoGradScope<Real> no_grad;
  return EnhancementModel<Real>::to_audio(model.decode(y, target_len));
}

template <class Real>
signal::AudioBuffer enhance(const signal::AudioBuffer& noisy, const EnhancementModel<Real>& model) {
  return model.enhance(noisy);
}

/// Copies parameter values from src into dst where names match.
template <class Real>
void copy_block_weights(const EnhancementModel<Real>& src, std::size_t src_block, EnhancementModel<Real>& dst,
                        std::size_t dst_block) {
  const std::string from = "blocks." + std::to_string(src_block) + ".";
  const std::string to = "blocks." + std::to_string(dst_block) + ".";
  std::size_t copied = 0;
  for (const auto& s : src.parameters()) {
    if (s.name().rfind(from, 0) != 0) continue;
    const std::string target = to + s.name().substr(from.size());
    for (auto& d : dst.parameters()) {
      if (d.name() == target) {
        if (d.shape() != s.shape()) throw ShapeError("copy_block_weights: shape mismatch for " + target);
        std::copy(s.values().begin(), s.values().end(), d.mutable_values().begin());
        ++copied;
      }
    }
  }
  if (copied == 0) throw ShapeError("copy_block_weights: no matching tensors");
}

/// Copies every non-block tensor (encoder/decoder) between models with equal names.
template <class Real>
void copy_codec_weights(const EnhancementModel<Real>& src, EnhancementModel<Real>& dst) {
  for (const auto& s : src.parameters()) {
    if (s.name().rfind("blocks.", 0) == 0) continue;
    for (auto& d : dst.parameters()) {
      if (d.name() == s.name()) {
        if (d.shape() != s.shape()) throw ShapeError("copy_codec_weights: shape mismatch for " + s.name());
        std::copy(s.values().begin(), s.values().end(), d.mutable_values().begin());
      }
    }
  }
}

}  // namespace serb::model
