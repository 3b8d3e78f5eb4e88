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
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "serb/error.hpp"
#include "serb/signal/audio.hpp"

namespace serb::train {

enum class NoiseKind { kWhite, kPink, kHarmonicClutter, kMixed };

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kWhite: return "white";
    case NoiseKind::kPink: return "pink";
    case NoiseKind::kHarmonicClutter: return "harmonic_clutter";
    case NoiseKind::kMixed: return "mixed";
  }
  return "white";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "white") return NoiseKind::kWhite;
  if (s == "pink") return NoiseKind::kPink;
  if (s == "harmonic_clutter") return NoiseKind::kHarmonicClutter;
  if (s == "mixed") return NoiseKind::kMixed;
  throw ConfigError("unknown noise recipe '" + s + "' (expected white, pink, harmonic_clutter or mixed)");
}

/// Recipe for harmonic speech-like sources and their noise.
struct SynthSpec {
  std::size_t num_utterances = 64;
  double duration_s = 2.0;
  double f0_min_hz = 80.0;
  double f0_max_hz = 300.0;
  std::size_t harmonics = 8;
  double am_rate_hz = 4.0;
  double fm_rate_hz = 3.0;
  double fm_depth = 0.05;
  double gap_max_s = 0.2;
  NoiseKind noise = NoiseKind::kMixed;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_utterances == 0) throw ConfigError("synth: num_utterances must be > 0");
    if (!(duration_s > 0.0)) throw ConfigError("synth: duration_s must be > 0");
    if (!(f0_min_hz > 0.0) || f0_min_hz > f0_max_hz) throw ConfigError("synth: invalid f0 range");
    if (harmonics == 0 || harmonics > 8) throw ConfigError("synth: harmonics must lie in [1, 8]");
    if (am_rate_hz < 0.0 || fm_rate_hz < 0.0 || fm_depth < 0.0 || fm_depth >= 1.0) {
      throw ConfigError("synth: invalid modulation settings");
    }
    if (gap_max_s < 0.0) throw ConfigError("synth: gap_max_s must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"num_utterances", s.num_utterances},
                     {"duration_s", s.duration_s},
                     {"f0_min_hz", s.f0_min_hz},
                     {"f0_max_hz", s.f0_max_hz},
                     {"harmonics", s.harmonics},
                     {"am_rate_hz", s.am_rate_hz},
                     {"fm_rate_hz", s.fm_rate_hz},
                     {"fm_depth", s.fm_depth},
                     {"gap_max_s", s.gap_max_s},
                     {"noise", to_string(s.noise)},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec d;
  s.num_utterances = j.value("num_utterances", d.num_utterances);
  s.duration_s = j.value("duration_s", d.duration_s);
  s.f0_min_hz = j.value("f0_min_hz", d.f0_min_hz);
  s.f0_max_hz = j.value("f0_max_hz", d.f0_max_hz);
  s.harmonics = j.value("harmonics", d.harmonics);
  s.am_rate_hz = j.value("am_rate_hz", d.am_rate_hz);
  s.fm_rate_hz = j.value("fm_rate_hz", d.fm_rate_hz);
  s.fm_depth = j.value("fm_depth", d.fm_depth);
  s.gap_max_s = j.value("gap_max_s", d.gap_max_s);
  s.noise = noise_kind_from_string(j.value("noise", to_string(d.noise)));
  s.seed = j.value("seed", d.seed);
  s.validate();
}

struct Utterance {
  signal::AudioBuffer clean;
  signal::AudioBuffer noise;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Portable draws on top of mt19937_64 (the std distributions are not
/// specified bit-exactly across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline void peak_normalize(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    for (double& v : x) v *= peak / m;
  }
}

/// Raised-cosine fade applied at the edges of each silent gap.
inline void apply_gaps(std::vector<double>& x, double max_gap_s, Rng& rng) {
  if (max_gap_s <= 0.0) return;
  const auto fs = static_cast<double>(signal::kSampleRate);
  const auto ramp = static_cast<std::size_t>(0.01 * fs);
  const auto min_voiced = static_cast<std::size_t>(0.4 * fs);
  std::vector<double> env(x.size(), 1.0);
  std::size_t pos = min_voiced + rng.index(min_voiced);
  while (pos + 1 < x.size()) {
    const auto gap = static_cast<std::size_t>(rng.uniform(0.05, max_gap_s) * fs);
    const std::size_t end = std::min(x.size(), pos + gap);
    for (std::size_t i = pos; i < end; ++i) env[i] = 0.0;
    for (std::size_t r = 0; r < ramp; ++r) {
      const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(r) / static_cast<double>(ramp));
      if (pos >= ramp) env[pos - ramp + r] = std::min(env[pos - ramp + r], 1.0 - w);
      if (end + r < x.size()) env[end + r] = std::min(env[end + r], w);
    }
    pos = end + min_voiced + rng.index(min_voiced);
  }
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= env[i];
}

inline std::vector<double> harmonic_source(const SynthSpec& spec, std::size_t n, Rng& rng) {
  const auto fs = static_cast<double>(signal::kSampleRate);
  const double f_start = rng.uniform(spec.f0_min_hz, spec.f0_max_hz);
  const double f_end = rng.uniform(spec.f0_min_hz, spec.f0_max_hz);
  const double fm_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double am_rate = spec.am_rate_hz * rng.uniform(0.75, 1.25);
  std::vector<double> amp(spec.harmonics), phase(spec.harmonics);
  for (std::size_t h = 0; h < spec.harmonics; ++h) {
    amp[h] = rng.uniform(0.5, 1.0) / static_cast<double>(h + 1);
    phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::vector<double> x(n, 0.0);
  double theta = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double frac = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    double f0 = f_start + (f_end - f_start) * frac;
    f0 *= 1.0 + spec.fm_depth * std::sin(2.0 * std::numbers::pi * spec.fm_rate_hz * t + fm_phase);
    f0 = std::clamp(f0, spec.f0_min_hz, spec.f0_max_hz);
    theta += 2.0 * std::numbers::pi * f0 / fs;
    const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase);
    double v = 0.0;
    for (std::size_t h = 0; h < spec.harmonics; ++h) {
      v += amp[h] * std::sin(static_cast<double>(h + 1) * theta + phase[h]);
    }
    x[i] = env * v;
  }
  apply_gaps(x, spec.gap_max_s, rng);
  peak_normalize(x, 0.5);
  return x;
}

inline std::vector<double> white_noise(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

/// Paul Kellet's refined pink filter over white noise.
inline std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (double& v : x) {
    const double w = rng.normal();
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  return x;
}

/// Inharmonic tone clutter (hum, whines) over a low white floor.
inline std::vector<double> harmonic_clutter(std::size_t n, Rng& rng) {
  const auto fs = static_cast<double>(signal::kSampleRate);
  const std::size_t tones = 4 + rng.index(8);
  std::vector<double> freq(tones), amp(tones), phase(tones), drift(tones);
  for (std::size_t k = 0; k < tones; ++k) {
    freq[k] = std::exp(rng.uniform(std::log(100.0), std::log(6000.0)));
    amp[k] = rng.uniform(0.2, 1.0);
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    drift[k] = rng.uniform(-0.05, 0.05);
  }
  std::vector<double> x = white_noise(n, rng);
  for (double& v : x) v *= 0.05;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    for (std::size_t k = 0; k < tones; ++k) {
      const double f = freq[k] * (1.0 + drift[k] * t);
      x[i] += amp[k] * std::sin(2.0 * std::numbers::pi * f * t + phase[k]);
    }
  }
  return x;
}

inline std::vector<double> noise_source(NoiseKind kind, std::size_t n, Rng& rng) {
  if (kind == NoiseKind::kMixed) {
    const NoiseKind pool[] = {NoiseKind::kWhite, NoiseKind::kPink, NoiseKind::kHarmonicClutter};
    kind = pool[rng.index(3)];
  }
  std::vector<double> x;
  switch (kind) {
    case NoiseKind::kWhite: x = white_noise(n, rng); break;
    case NoiseKind::kPink: x = pink_noise(n, rng); break;
    default: x = harmonic_clutter(n, rng); break;
  }
  peak_normalize(x, 0.5);
  return x;
}

}  // namespace detail

/// Seed of utterance i; each utterance is generated from its own stream.
inline std::uint64_t utterance_seed(std::uint64_t spec_seed, std::size_t i) {
  return detail::splitmix64(detail::splitmix64(spec_seed) ^ static_cast<std::uint64_t>(i));
}

inline Utterance synth_utterance(const SynthSpec& spec, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * signal::kSampleRate));
  detail::Rng rng(seed);
  Utterance u;
  u.seed = seed;
  u.clean = signal::AudioBuffer(detail::harmonic_source(spec, n, rng));
  u.noise = signal::AudioBuffer(detail::noise_source(spec.noise, n, rng));
  return u;
}

inline std::vector<Utterance> synth_dataset(const SynthSpec& spec) {
  spec.validate();
  std::vector<Utterance> out;
  out.reserve(spec.num_utterances);
  for (std::size_t i = 0; i < spec.num_utterances; ++i) {
    out.push_back(synth_utterance(spec, utterance_seed(spec.seed, i)));
  }
  return out;
}

}  // namespace serb::train
