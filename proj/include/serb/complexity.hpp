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
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "serb/model/config.hpp"
#include "serb/signal/audio.hpp"

namespace serb::complexity {

/// Parameter and multiply-accumulate totals for one configuration.
///
/// MAC convention: one MAC per multiply-accumulate in convolutions, linear
/// maps and the two attention matrix products (scores and context, L^2 * C
/// each per sequence). Normalization, softmax, activations and the STFT are
/// not counted.
struct ComplexityReport {
  std::uint64_t total_params = 0;
  std::map<std::string, std::uint64_t> params_by_component;  // encoder, block, decoder
  double macs = 0.0;
  double macs_per_second = 0.0;
  std::map<std::string, double> macs_by_component;  // encoder, block, decoder
  std::size_t stages = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
};

namespace detail {

inline std::uint64_t dense_stack_params(std::uint64_t c, std::uint64_t depth) {
  if (depth == 0) return 0;
  std::uint64_t n = 0;
  for (std::uint64_t i = 0; i < depth; ++i) n += c * c * (i + 1) * 9 + c;
  return n + c * c * (depth + 1) + c;
}

inline double dense_stack_macs(double c, std::uint64_t depth, double positions) {
  if (depth == 0) return 0.0;
  double n = 0.0;
  for (std::uint64_t i = 0; i < depth; ++i) n += c * c * static_cast<double>(i + 1) * 9.0 * positions;
  return n + c * c * static_cast<double>(depth + 1) * positions;
}

}  // namespace detail

/// Trainable scalars of one dual-path block.
inline std::uint64_t block_params(const model::ModelConfig& cfg) {
  const std::uint64_t c = cfg.channels, h = cfg.hidden, k = cfg.kernel;
  const std::uint64_t ffn = c + k * c * 2 * h + 2 * h + k * h * c + c;
  const std::uint64_t attn = c + 4 * (c * c + c);
  return 2 * (2 * ffn + attn);
}

inline ComplexityReport count_params(const model::ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t c = cfg.channels, ck = model::kCodecKernel;
  ComplexityReport r;
  const std::uint64_t dense = detail::dense_stack_params(c, cfg.dense_depth);
  r.params_by_component["encoder"] = c * 2 * ck * ck + c + dense;
  r.params_by_component["block"] = block_params(cfg);
  r.params_by_component["decoder"] = dense + c * 2 * ck * ck + 2;
  r.total_params = r.params_by_component["encoder"] + cfg.blocks * r.params_by_component["block"] +
                   r.params_by_component["decoder"];
  r.stages = cfg.stages();
  return r;
}

/// MACs of one block application on a T x F feature.
inline double block_macs(const model::ModelConfig& cfg, std::size_t frames, std::size_t bins) {
  const double c = static_cast<double>(cfg.channels), h = static_cast<double>(cfg.hidden);
  const double k = static_cast<double>(cfg.kernel);
  const double t = static_cast<double>(frames), f = static_cast<double>(bins);
  const double positions = t * f;
  const double ffn = positions * (k * c * 2.0 * h + k * h * c);
  const double projections = positions * 4.0 * c * c;
  const double freq_scores = 2.0 * t * f * f * c;  // T sequences of length F
  const double time_scores = 2.0 * f * t * t * c;  // F sequences of length T
  return 2.0 * (2.0 * ffn + projections) + freq_scores + time_scores;
}

inline ComplexityReport count_macs(const model::ModelConfig& cfg, double duration_s = 1.0) {
  ComplexityReport r = count_params(cfg);
  const auto samples = static_cast<std::size_t>(std::llround(duration_s * signal::kSampleRate));
  r.frames = cfg.stft.num_frames(samples);
  r.bins = cfg.stft.num_bins();
  const double positions = static_cast<double>(r.frames * r.bins);
  const double c = static_cast<double>(cfg.channels);
  const double codec = c * 2.0 * 9.0 * positions;
  const double dense = detail::dense_stack_macs(c, cfg.dense_depth, positions);
  r.macs_by_component["encoder"] = codec + dense;
  r.macs_by_component["block"] = block_macs(cfg, r.frames, r.bins);
  r.macs_by_component["decoder"] = dense + codec;
  r.macs = r.macs_by_component["encoder"] + r.macs_by_component["decoder"] +
           static_cast<double>(r.stages) * r.macs_by_component["block"];
  r.macs_per_second = r.macs / duration_s;
  return r;
}

/// The (B, R) grid of the block-versus-repeat complexity table.
inline std::vector<std::pair<std::size_t, std::size_t>> table_grid() {
  return {{1, 1}, {4, 1}, {8, 1}, {12, 1}, {16, 1}, {1, 4},
          {1, 8}, {1, 12}, {1, 16}, {2, 8}, {4, 4}, {8, 2}};
}

inline std::string csv_header() { return "B,R,params,macs_g_per_s\n"; }

inline std::string csv_row(const model::ModelConfig& cfg) {
  const auto r = count_macs(cfg);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%llu,%.4f\n", cfg.blocks, cfg.repeats,
                static_cast<unsigned long long>(r.total_params), r.macs_per_second / 1e9);
  return buf;
}

/// CSV with one row per config, in the given order.
inline std::string table_sweep(const std::vector<model::ModelConfig>& configs) {
  std::string out = csv_header();
  for (const auto& cfg : configs) out += csv_row(cfg);
  return out;
}

}  // namespace serb::complexity
