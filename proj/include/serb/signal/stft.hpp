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
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "serb/error.hpp"
#include "serb/signal/audio.hpp"
#include "serb/signal/fft.hpp"

namespace serb::signal {

/// Analysis/synthesis geometry. Frames are centered: the signal is
/// reflection-padded by win_len/2 on both sides, so a length-L input yields
/// floor(L / hop) + 1 frames.
struct StftConfig {
  std::size_t win_len = 256;
  std::size_t hop = 128;

  void validate() const {
    if (win_len < 2 || (win_len & (win_len - 1)) != 0) {
      throw ConfigError("stft: win_len must be a power of two >= 2, got " +
                        std::to_string(win_len));
    }
    if (hop == 0 || win_len % hop != 0) {
      throw ConfigError("stft: hop must divide win_len");
    }
  }
  std::size_t num_bins() const { return win_len / 2 + 1; }
  std::size_t num_frames(std::size_t length) const { return length / hop + 1; }
  std::size_t pad() const { return win_len / 2; }

  bool operator==(const StftConfig&) const = default;
};

/// One-sided complex spectrogram, row-major T x F planes.
struct Spectrogram {
  StftConfig config;
  std::size_t num_frames = 0;
  std::size_t num_bins = 0;
  std::vector<double> real;
  std::vector<double> imag;

  double& re(std::size_t t, std::size_t f) { return real[t * num_bins + f]; }
  double& im(std::size_t t, std::size_t f) { return imag[t * num_bins + f]; }
  double re(std::size_t t, std::size_t f) const { return real[t * num_bins + f]; }
  double im(std::size_t t, std::size_t f) const { return imag[t * num_bins + f]; }
};

/// Periodic Hann window: w[n] = 0.5 - 0.5 cos(2 pi n / N).
template <class Real>
std::vector<Real> hann_periodic(std::size_t n) {
  std::vector<Real> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<Real>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                                  static_cast<double>(i) /
                                                  static_cast<double>(n)));
  }
  return w;
}

/// Maps an index of the padded signal onto the original signal using
/// whole-sample symmetric reflection, repeated as often as needed so that
/// signals shorter than the pad are still defined.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

namespace detail {

// Overlap-add envelope: sum over frames of w^2 at each padded position.
template <class Real>
std::vector<Real> window_envelope(const std::vector<Real>& window, std::size_t frames,
                                  std::size_t hop) {
  const std::size_t win = window.size();
  std::vector<Real> env((frames - 1) * hop + win, Real(0));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < win; ++n) env[t * hop + n] += window[n] * window[n];
  }
  return env;
}

constexpr double kEnvelopeFloor = 1e-10;

}  // namespace detail

/// Forward STFT kernel. Writes T*F real and imaginary values.
template <class Real>
void stft_kernel(std::span<const Real> x, const StftConfig& cfg, std::span<Real> re,
                 std::span<Real> im) {
  cfg.validate();
  if (x.empty()) throw ShapeError("stft: empty signal");
  const std::size_t win = cfg.win_len;
  const std::size_t bins = cfg.num_bins();
  const std::size_t frames = cfg.num_frames(x.size());
  if (re.size() != frames * bins || im.size() != frames * bins) {
    throw ShapeError("stft: output planes have wrong size");
  }
  const auto window = hann_periodic<Real>(win);
  const FftPlan<Real> plan(win);
  std::vector<std::complex<Real>> buf(win);
  const auto pad = static_cast<std::ptrdiff_t>(cfg.pad());
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * cfg.hop) - pad;
    for (std::size_t n = 0; n < win; ++n) {
      const std::size_t src = reflect_index(start + static_cast<std::ptrdiff_t>(n), x.size());
      buf[n] = {x[src] * window[n], Real(0)};
    }
    plan.forward(buf);
    for (std::size_t k = 0; k < bins; ++k) {
      re[t * bins + k] = buf[k].real();
      im[t * bins + k] = buf[k].imag();
    }
  }
}

/// Adjoint of stft_kernel: accumulates into grad_x (length of the analysed
/// signal) the transpose map applied to the spectral gradients.
template <class Real>
void stft_adjoint(std::span<const Real> grad_re, std::span<const Real> grad_im,
                  const StftConfig& cfg, std::span<Real> grad_x) {
  const std::size_t win = cfg.win_len;
  const std::size_t bins = cfg.num_bins();
  const std::size_t frames = cfg.num_frames(grad_x.size());
  const auto window = hann_periodic<Real>(win);
  const FftPlan<Real> plan(win);
  std::vector<std::complex<Real>> buf(win);
  const auto pad = static_cast<std::ptrdiff_t>(cfg.pad());
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<Real>(0, 0));
    for (std::size_t k = 0; k < bins; ++k) {
      buf[k] = {grad_re[t * bins + k], grad_im[t * bins + k]};
    }
    // sum_k (gr_k cos(theta) - gi_k sin(theta)) = Re(sum_k (gr_k + i gi_k) e^{+i theta})
    plan.inverse(buf);
    const auto start = static_cast<std::ptrdiff_t>(t * cfg.hop) - pad;
    for (std::size_t n = 0; n < win; ++n) {
      const std::size_t dst =
          reflect_index(start + static_cast<std::ptrdiff_t>(n), grad_x.size());
      grad_x[dst] += buf[n].real() * window[n];
    }
  }
}

/// Inverse STFT kernel: windowed overlap-add divided by the squared-window
/// envelope, then trimmed (or zero-extended) to out.size() samples.
template <class Real>
void istft_kernel(std::span<const Real> re, std::span<const Real> im, std::size_t frames,
                  const StftConfig& cfg, std::span<Real> out) {
  cfg.validate();
  const std::size_t win = cfg.win_len;
  const std::size_t bins = cfg.num_bins();
  if (frames == 0 || re.size() != frames * bins || im.size() != frames * bins) {
    throw ShapeError("istft: spectrogram planes inconsistent with config (F=" +
                     std::to_string(bins) + ")");
  }
  const auto window = hann_periodic<Real>(win);
  const auto env = detail::window_envelope(window, frames, cfg.hop);
  std::vector<Real> ola(env.size(), Real(0));
  const FftPlan<Real> plan(win);
  std::vector<std::complex<Real>> buf(win);
  const Real inv_n = Real(1) / static_cast<Real>(win);
  for (std::size_t t = 0; t < frames; ++t) {
    // Hermitian extension; DC and Nyquist imaginary parts are ignored.
    buf[0] = {re[t * bins], Real(0)};
    buf[win / 2] = {re[t * bins + win / 2], Real(0)};
    for (std::size_t k = 1; k < win / 2; ++k) {
      buf[k] = {re[t * bins + k], im[t * bins + k]};
      buf[win - k] = std::conj(buf[k]);
    }
    plan.inverse(buf);
    for (std::size_t n = 0; n < win; ++n) {
      ola[t * cfg.hop + n] += buf[n].real() * inv_n * window[n];
    }
  }
  const std::size_t pad = cfg.pad();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t p = i + pad;
    out[i] = (p < env.size() && env[p] > detail::kEnvelopeFloor) ? ola[p] / env[p] : Real(0);
  }
}

/// Adjoint of istft_kernel: maps a waveform gradient back onto the RI planes.
template <class Real>
void istft_adjoint(std::span<const Real> grad_out, std::size_t frames, const StftConfig& cfg,
                   std::span<Real> grad_re, std::span<Real> grad_im) {
  const std::size_t win = cfg.win_len;
  const std::size_t bins = cfg.num_bins();
  const auto window = hann_periodic<Real>(win);
  const auto env = detail::window_envelope(window, frames, cfg.hop);
  std::vector<Real> g_ola(env.size(), Real(0));
  const std::size_t pad = cfg.pad();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const std::size_t p = i + pad;
    if (p < env.size() && env[p] > detail::kEnvelopeFloor) g_ola[p] += grad_out[i] / env[p];
  }
  const FftPlan<Real> plan(win);
  std::vector<std::complex<Real>> buf(win);
  const Real inv_n = Real(1) / static_cast<Real>(win);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < win; ++n) {
      buf[n] = {g_ola[t * cfg.hop + n] * window[n] * inv_n, Real(0)};
    }
    plan.forward(buf);  // G_k = sum_n g_n e^{-i theta}
    grad_re[t * bins] += buf[0].real();
    grad_re[t * bins + win / 2] += buf[win / 2].real();
    for (std::size_t k = 1; k < win / 2; ++k) {
      grad_re[t * bins + k] += Real(2) * buf[k].real();
      grad_im[t * bins + k] += Real(2) * buf[k].imag();
    }
  }
}

inline Spectrogram stft(const AudioBuffer& audio, const StftConfig& cfg = {}) {
  if (audio.empty()) throw ShapeError("stft: empty buffer");
  cfg.validate();
  Spectrogram spec;
  spec.config = cfg;
  spec.num_frames = cfg.num_frames(audio.size());
  spec.num_bins = cfg.num_bins();
  spec.real.assign(spec.num_frames * spec.num_bins, 0.0);
  spec.imag.assign(spec.num_frames * spec.num_bins, 0.0);
  stft_kernel<double>(audio.samples, cfg, spec.real, spec.imag);
  return spec;
}

inline AudioBuffer istft(const Spectrogram& spec, std::size_t target_len) {
  if (spec.num_bins != spec.config.num_bins()) {
    throw ShapeError("istft: F=" + std::to_string(spec.num_bins) +
                     " does not match win_len " + std::to_string(spec.config.win_len));
  }
  AudioBuffer out(std::vector<double>(target_len, 0.0));
  istft_kernel<double>(spec.real, spec.imag, spec.num_frames, spec.config, out.samples);
  return out;
}

/// Magnitude plane |X| (T x F, row-major).
inline std::vector<double> magnitude(const Spectrogram& spec) {
  std::vector<double> mag(spec.real.size());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(spec.real[i], spec.imag[i]);
  return mag;
}

}  // namespace serb::signal
