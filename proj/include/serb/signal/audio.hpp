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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "serb/error.hpp"

namespace serb::signal {

inline constexpr int kSampleRate = 16000;

/// Mono waveform at the fixed pipeline rate.
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  AudioBuffer() = default;
  explicit AudioBuffer(std::vector<double> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void check_finite(const char* what) const {
    for (double v : samples) {
      if (!std::isfinite(v)) {
        throw NumericalError(std::string(what) + ": non-finite sample");
      }
    }
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serializes a mono 16 kHz buffer as RIFF/WAVE bytes.
inline std::string encode_wav(const AudioBuffer& audio, WavEncoding encoding) {
  audio.check_finite("write_wav");
  if (audio.sample_rate != kSampleRate) {
    throw IoError("write_wav: unsupported sample rate " +
                  std::to_string(audio.sample_rate));
  }
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t bytes_per_sample = bits / 8;
  const auto data_bytes =
      static_cast<std::uint32_t>(audio.samples.size() * bytes_per_sample);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, pcm ? 1 : 3);
  detail::put_u16(out, 1);
  detail::put_u32(out, kSampleRate);
  detail::put_u32(out, kSampleRate * bytes_per_sample);
  detail::put_u16(out, static_cast<std::uint16_t>(bytes_per_sample));
  detail::put_u16(out, bits);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double v : audio.samples) {
    if (pcm) {
      const double scaled = std::round(v * 32768.0);
      const double clamped = std::min(32767.0, std::max(-32768.0, scaled));
      detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(clamped)));
    } else {
      const float f = static_cast<float>(v);
      std::uint32_t bits32 = 0;
      std::memcpy(&bits32, &f, sizeof(f));
      detail::put_u32(out, bits32);
    }
  }
  return out;
}

inline AudioBuffer decode_wav(const std::string& bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) -> IoError {
    return IoError(origin + ": " + why);
  };
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 ||
      std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw fail("malformed header (not RIFF/WAVE)");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = detail::get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_size > bytes.size()) throw fail("truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw fail("malformed fmt chunk");
      format = detail::get_u16(p + body);
      channels = detail::get_u16(p + body + 2);
      rate = detail::get_u32(p + body + 4);
      bits = detail::get_u16(p + body + 14);
      if (format == 0xFFFE && chunk_size >= 40) {
        format = detail::get_u16(p + body + 24);  // extensible sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels != 1) {
        throw fail("unsupported channels: " + std::to_string(channels));
      }
      if (rate != kSampleRate) {
        throw fail("unsupported sample rate: " + std::to_string(rate));
      }
      AudioBuffer audio;
      if (format == 1 && bits == 16) {
        audio.samples.resize(chunk_size / 2);
        for (std::size_t i = 0; i < audio.samples.size(); ++i) {
          const auto raw = static_cast<std::int16_t>(detail::get_u16(p + body + 2 * i));
          audio.samples[i] = static_cast<double>(raw) / 32768.0;
        }
      } else if (format == 3 && bits == 32) {
        audio.samples.resize(chunk_size / 4);
        for (std::size_t i = 0; i < audio.samples.size(); ++i) {
          const std::uint32_t raw = detail::get_u32(p + body + 4 * i);
          float f = 0;
          std::memcpy(&f, &raw, sizeof(f));
          audio.samples[i] = f;
        }
      } else {
        throw fail("unsupported encoding (format " + std::to_string(format) +
                   ", " + std::to_string(bits) + " bits)");
      }
      audio.check_finite("read_wav");
      return audio;
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  throw fail("missing data chunk");
}

inline AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

inline void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
                      WavEncoding encoding = WavEncoding::kFloat32) {
  const std::string bytes = encode_wav(audio, encoding);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace serb::signal
