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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "serb/error.hpp"
#include "serb/signal/audio.hpp"
#include "serb/signal/stft.hpp"

namespace serb::signal {

/// SI-SDR values are clamped to +/- this many dB.
inline constexpr double kSiSdrCapDb = 100.0;

inline double power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

struct Mixture {
  AudioBuffer noisy;
  AudioBuffer scaled_noise;
};

/// Rescales noise so that 10 log10(P_clean / P_noise) == snr_db and adds it to
/// the clean signal.
inline Mixture mix_at_snr(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db) {
  if (clean.size() != noise.size()) {
    throw ShapeError("mix_at_snr: length mismatch (" + std::to_string(clean.size()) + " vs " +
                     std::to_string(noise.size()) + ")");
  }
  const double pc = power(clean.samples);
  const double pn = power(noise.samples);
  if (!(pc > 0.0)) throw Error("mix_at_snr: clean signal has zero power");
  if (!(pn > 0.0)) throw Error("mix_at_snr: noise signal has zero power");
  const double gain = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  Mixture mix;
  mix.scaled_noise.samples.resize(noise.size());
  mix.noisy.samples.resize(noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    mix.scaled_noise.samples[i] = gain * noise.samples[i];
    mix.noisy.samples[i] = clean.samples[i] + mix.scaled_noise.samples[i];
  }
  return mix;
}

inline double snr_db(const AudioBuffer& clean, const AudioBuffer& noise) {
  return 10.0 * std::log10(power(clean.samples) / power(noise.samples));
}

/// Scale-invariant SDR in dB, clamped to [-100, +100].
inline double si_sdr(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size()) throw ShapeError("si_sdr: length mismatch");
  const double ref_energy = dot(reference, reference);
  if (!(ref_energy > 0.0)) throw Error("si_sdr: zero reference");
  const double alpha = dot(estimate, reference) / ref_energy;
  double target = 0.0;
  double residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = alpha * reference[i];
    const double e = estimate[i] - s;
    target += s * s;
    residual += e * e;
  }
  if (residual <= 0.0) return kSiSdrCapDb;
  if (target <= 0.0) return -kSiSdrCapDb;
  const double db = 10.0 * std::log10(target / residual);
  return std::clamp(db, -kSiSdrCapDb, kSiSdrCapDb);
}

inline double si_sdr(const AudioBuffer& estimate, const AudioBuffer& reference) {
  return si_sdr(std::span<const double>(estimate.samples),
                std::span<const double>(reference.samples));
}

inline const std::vector<std::size_t>& default_resolutions() {
  static const std::vector<std::size_t> kResolutions{256, 512, 1024};
  return kResolutions;
}

/// Mean over resolutions of the mean absolute magnitude-spectrogram
/// difference; each resolution uses hop = win / 4.
inline double spectral_l1_distance(const AudioBuffer& a, const AudioBuffer& b,
                                   const std::vector<std::size_t>& resolutions = default_resolutions()) {
  if (a.size() != b.size()) throw ShapeError("spectral_l1_distance: length mismatch");
  if (resolutions.empty()) throw ConfigError("spectral_l1_distance: no resolutions");
  double total = 0.0;
  for (std::size_t win : resolutions) {
    const StftConfig cfg{win, win / 4};
    const auto ma = magnitude(stft(a, cfg));
    const auto mb = magnitude(stft(b, cfg));
    double acc = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) acc += std::abs(ma[i] - mb[i]);
    total += acc / static_cast<double>(ma.size());
  }
  return total / static_cast<double>(resolutions.size());
}

}  // namespace serb::signal
