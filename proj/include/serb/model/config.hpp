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

#include <cstddef>
#include <string>

#include <json.hpp>

#include "serb/error.hpp"
#include "serb/signal/stft.hpp"

namespace serb::model {

/// How consecutive repeats of the block stack are joined.
enum class Fusion {
  kDirect,     ///< DC: next repeat consumes the previous output unchanged
  kSummation,  ///< SC: the encoded input feature is added after every repeat
};

inline std::string to_string(Fusion f) { return f == Fusion::kDirect ? "DC" : "SC"; }

inline Fusion fusion_from_string(const std::string& s) {
  if (s == "DC") return Fusion::kDirect;
  if (s == "SC") return Fusion::kSummation;
  throw ConfigError("fusion must be \"DC\" or \"SC\", got \"" + s + "\"");
}

/// Kernel size of the encoder/decoder 2-D (de)convolutions.
inline constexpr std::size_t kCodecKernel = 3;

struct ModelConfig {
  std::size_t blocks = 1;       ///< B: distinct block weight sets
  std::size_t repeats = 1;      ///< R: passes over the B-block stack
  Fusion fusion = Fusion::kDirect;
  std::size_t channels = 64;    ///< C
  std::size_t hidden = 172;     ///< Conv-SwiGLU hidden width
  std::size_t kernel = 3;       ///< Conv-SwiGLU 1-D kernel size
  std::size_t heads = 4;
  std::size_t dense_depth = 0;  ///< K: dilated dense layers in encoder and decoder
  signal::StftConfig stft{};

  std::size_t stages() const { return blocks * repeats; }

  void validate() const {
    if (blocks < 1) throw ConfigError("blocks (B) must be >= 1");
    if (repeats < 1) throw ConfigError("repeats (R) must be >= 1");
    if (channels < 1 || hidden < 1) throw ConfigError("channels and hidden must be >= 1");
    if (heads < 1 || channels % heads != 0) {
      throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    }
    if (kernel % 2 == 0) throw ConfigError("kernel must be odd");
    stft.validate();
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Fixed order of the two sequence paths inside a block.
inline constexpr const char* kPathOrder = "frequency,time";

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"blocks", c.blocks},
                     {"repeats", c.repeats},
                     {"fusion", to_string(c.fusion)},
                     {"channels", c.channels},
                     {"hidden", c.hidden},
                     {"kernel", c.kernel},
                     {"heads", c.heads},
                     {"dense_depth", c.dense_depth},
                     {"win_len", c.stft.win_len},
                     {"hop", c.stft.hop},
                     {"path_order", kPathOrder}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  auto get = [&](const char* key, std::size_t& field) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(std::string("model.") + key + " must be a non-negative integer");
    }
    field = v.get<std::size_t>();
  };
  get("blocks", c.blocks);
  get("repeats", c.repeats);
  get("channels", c.channels);
  get("hidden", c.hidden);
  get("kernel", c.kernel);
  get("heads", c.heads);
  get("dense_depth", c.dense_depth);
  get("win_len", c.stft.win_len);
  get("hop", c.stft.hop);
  if (j.contains("fusion")) {
    if (!j.at("fusion").is_string()) throw ConfigError("model.fusion must be a string");
    c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
  }
  c.validate();
}

}  // namespace serb::model
