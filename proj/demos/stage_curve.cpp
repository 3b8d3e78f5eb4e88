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

// Mixes one synthetic utterance at a given SNR, runs every processing stage
// through the shared decoder and prints the SI-SDR after each stage.
//
//   stage_curve model.ckpt [snr_db] [seed]

#include <cstdio>
#include <cstdlib>

#include "serb/serb.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s model.ckpt [snr_db] [seed]\n", argv[0]);
    return 2;
  }
  const double snr = argc > 2 ? std::atof(argv[2]) : 0.0;
  const auto seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 1005ULL;
  try {
    const auto model = serb::model::load_checkpoint<float>(argv[1]);
    serb::train::SynthSpec spec;
    spec.duration_s = 2.0;
    const auto u = serb::train::synth_utterance(spec, seed);
    const auto mix = serb::signal::mix_at_snr(u.clean, u.noise, snr);
    std::printf("stage  si_sdr_db  spectral_l1\n");
    std::printf("%5s  %9.3f  %11.4f\n", "noisy", serb::signal::si_sdr(mix.noisy, u.clean),
                serb::signal::spectral_l1_distance(mix.noisy, u.clean));
    for (const auto& t : model.probe_stages(mix.noisy, &u.clean)) {
      std::printf("%5zu  %9.3f  %11.4f\n", t.stage, *t.si_sdr_db, *t.spectral_l1);
    }
  } catch (const serb::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
