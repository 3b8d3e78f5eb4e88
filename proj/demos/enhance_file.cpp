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

// Enhances a mono 16 kHz WAV file with a trained checkpoint.
//
//   enhance_file model.ckpt noisy.wav enhanced.wav

#include <cstdio>

#include "serb/serb.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::fprintf(stderr, "usage: %s model.ckpt noisy.wav enhanced.wav\n", argv[0]);
    return 2;
  }
  try {
    const auto model = serb::model::load_checkpoint<float>(argv[1]);
    const auto noisy = serb::signal::read_wav(argv[2]);
    const auto enhanced = serb::model::enhance(noisy, model);
    serb::signal::write_wav(argv[3], enhanced, serb::signal::WavEncoding::kFloat32);
    const auto& cfg = model.config();
    std::printf("B=%zu R=%zu %s, %zu samples\n", cfg.blocks, cfg.repeats, serb::model::to_string(cfg.fusion).c_str(),
                enhanced.size());
  } catch (const serb::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
