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

#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "serb/error.hpp"

namespace serb::signal {

/// Iterative radix-2 complex FFT for a fixed power-of-two length.
///
/// forward() computes X_k = sum_n x_n exp(-2 pi i k n / N); inverse() uses the
/// opposite sign and is left unnormalized.
template <class Real>
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0 || (n & (n - 1)) != 0) {
      throw ConfigError("FFT length must be a power of two, got " +
                        std::to_string(n));
    }
    bitrev_.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      bitrev_[i] = r;
    }
    twiddle_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(n);
      twiddle_[k] = {static_cast<Real>(std::cos(angle)),
                     static_cast<Real>(std::sin(angle))};
    }
  }

  std::size_t size() const { return n_; }

  void forward(std::span<std::complex<Real>> data) const { run(data, false); }
  void inverse(std::span<std::complex<Real>> data) const { run(data, true); }

 private:
  void run(std::span<std::complex<Real>> data, bool inverse) const {
    if (data.size() != n_) throw ShapeError("FFT buffer length mismatch");
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          std::complex<Real> w = twiddle_[j * step];
          if (inverse) w = std::conj(w);
          const std::complex<Real> u = data[start + j];
          const std::complex<Real> v = data[start + j + half] * w;
          data[start + j] = u + v;
          data[start + j + half] = u - v;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<Real>> twiddle_;
};

}  // namespace serb::signal
