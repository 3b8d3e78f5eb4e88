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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "serb/complexity.hpp"
#include "serb/model/checkpoint.hpp"
#include "serb/model/network.hpp"
#include "serb/signal/metrics.hpp"
#include "support/oracles.hpp"

namespace serb::model {
namespace {

using ad::Shape;
using testing::random_vector;

/// Micro configuration: C=8, 16-point STFT (F=9), one small block.
ModelConfig micro(std::size_t blocks = 1, std::size_t repeats = 1, Fusion fusion = Fusion::kDirect) {
  ModelConfig c;
  c.blocks = blocks;
  c.repeats = repeats;
  c.fusion = fusion;
  c.channels = 8;
  c.hidden = 6;
  c.heads = 2;
  c.stft = signal::StftConfig{16, 8};
  return c;
}

template <class Real>
ad::Tensor<Real> random_feature(const ModelConfig& c, std::size_t frames, std::uint64_t seed) {
  const auto v = random_vector(c.channels * frames * c.stft.num_bins(), seed);
  return ad::Tensor<Real>(Shape{c.channels, frames, c.stft.num_bins()}, std::vector<Real>(v.begin(), v.end()));
}

signal::AudioBuffer random_audio(std::size_t n, std::uint64_t seed) {
  return signal::AudioBuffer(random_vector(n, seed, -0.5, 0.5));
}

template <class Real>
double max_abs_diff(const ad::Tensor<Real>& a, const ad::Tensor<Real>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "serb_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TEST(Config, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.channels = 66;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.repeats = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  auto c = micro(3, 2, Fusion::kSummation);
  c.dense_depth = 2;
  const nlohmann::json j = c;
  EXPECT_EQ(j.at("path_order"), "frequency,time");
  EXPECT_EQ(j.get<ModelConfig>(), c);
}

// --- encode ---------------------------------------------------------------

TEST(Encode, ZeroSpectrogramGivesZeroFeature) {
  const EnhancementModel<double> m(micro(), 1);
  const auto spec = signal::stft(signal::AudioBuffer(std::vector<double>(64, 0.0)), m.config().stft);
  const auto x0 = encode(spec, m);
  for (double v : x0.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, DefaultConfigShape) {
  const EnhancementModel<float> m(ModelConfig{}, 1);
  const auto spec = signal::stft(random_audio(1600, 2));
  const auto x0 = encode(spec, m);
  EXPECT_EQ(x0.shape(), (Shape{64, 13, 129}));
}

TEST(Encode, DenseDepthIncrementMatchesComplexityOracle) {
  auto c0 = micro(), c1 = micro();
  c1.dense_depth = 1;
  const EnhancementModel<double> m0(c0), m1(c1);
  const auto delta = static_cast<std::int64_t>(m1.parameter_count()) - static_cast<std::int64_t>(m0.parameter_count());
  const auto analytic = static_cast<std::int64_t>(complexity::count_params(c1).total_params) -
                        static_cast<std::int64_t>(complexity::count_params(c0).total_params);
  EXPECT_EQ(delta, analytic);
  // Two dense stacks (encoder and decoder), each a 3x3 C->C conv and a 2C->C projection.
  const std::int64_t c = 8;
  EXPECT_EQ(delta, 2 * ((c * c * 9 + c) + (2 * c * c + c)));
}

TEST(Encode, DenseStackPreservesShape) {
  auto c = micro();
  c.dense_depth = 3;
  const EnhancementModel<double> m(c, 4);
  const auto y = m.forward(EnhancementModel<double>::to_tensor(random_audio(100, 3)));
  EXPECT_EQ(y.size(), 100u);
}

TEST(Encode, StftMismatchThrows) {
  const EnhancementModel<double> m(micro(), 1);
  EXPECT_THROW(encode(signal::stft(random_audio(300, 1)), m), ShapeError);
}

// --- tf_block -------------------------------------------------------------

TEST(TfBlock, PreservesShapeAtDefaultWidth) {
  const EnhancementModel<float> m(ModelConfig{}, 3);
  const auto x = random_feature<float>(m.config(), 10, 4);
  EXPECT_EQ(m.tf_block(x, 0).shape(), (Shape{64, 10, 129}));
}

TEST(TfBlock, SingleFrameIsFinite) {
  const EnhancementModel<double> m(micro(), 5);
  const auto y = m.tf_block(random_feature<double>(m.config(), 1, 6), 0);
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(TfBlock, InputGradientMatchesFiniteDifferences) {
  const EnhancementModel<double> m(micro(), 7);
  auto x = random_feature<double>(m.config(), 4, 8);
  x.set_requires_grad(true);
  const double err = testing::gradient_error<double>([&] { return ad::sum(ad::square(m.tf_block(x, 0))); }, {x}, 1e-5);
  EXPECT_LT(err, 1e-4);
}

// --- run_stages -----------------------------------------------------------

TEST(RunStages, DirectSingleRepeatIsTheStack) {
  const EnhancementModel<double> m(micro(2, 1), 9);
  const auto x0 = random_feature<double>(m.config(), 5, 10);
  const auto y = m.run_stages(x0).output;
  const auto stack = m.tf_block(m.tf_block(x0, 0), 1);
  EXPECT_EQ(max_abs_diff(y, stack), 0.0);
}

TEST(RunStages, SummationSingleRepeatAddsInput) {
  const EnhancementModel<double> dc(micro(2, 1, Fusion::kDirect), 11), sc(micro(2, 1, Fusion::kSummation), 11);
  const auto x0 = random_feature<double>(dc.config(), 5, 12);
  const auto ydc = dc.run_stages(x0).output, ysc = sc.run_stages(x0).output;
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(ysc[i], ydc[i] + x0[i]);
}

TEST(RunStages, SummationRepeatsFeedBackTheInput) {
  const EnhancementModel<double> m(micro(1, 3, Fusion::kSummation), 13);
  const auto x0 = random_feature<double>(m.config(), 4, 14);
  auto y = x0;
  for (int r = 0; r < 3; ++r) y = ad::add(m.tf_block(y, 0), x0);
  EXPECT_EQ(max_abs_diff(m.run_stages(x0).output, y), 0.0);
}

TEST(RunStages, TiedWeightsMatchStackedCopies) {
  for (std::size_t k = 2; k <= 6; ++k) {
    const EnhancementModel<float> repeated(micro(1, k), 15);
    EnhancementModel<float> stacked(micro(k, 1), 99);
    copy_codec_weights(repeated, stacked);
    for (std::size_t b = 0; b < k; ++b) copy_block_weights(repeated, 0, stacked, b);
    const auto x = EnhancementModel<float>::to_tensor(random_audio(200, 16 + k));
    EXPECT_LT(max_abs_diff(repeated.forward(x), stacked.forward(x)), 1e-6) << "k=" << k;
  }
}

TEST(RunStages, TraceHasOneFeaturePerBlockApplication) {
  const EnhancementModel<double> m(micro(2, 3), 17);
  const auto r = m.run_stages(random_feature<double>(m.config(), 3, 18), true);
  ASSERT_EQ(r.stages.size(), 6u);
  EXPECT_EQ(max_abs_diff(r.stages.back(), r.output), 0.0);
}

// --- decode / enhance -----------------------------------------------------

TEST(Decode, ZeroFeatureGivesSilence) {
  const EnhancementModel<double> m(micro(), 19);
  const ad::Tensor<double> y(Shape{8, 5, 9}, 0.0);
  for (double v : decode(y, m, 32).samples) EXPECT_EQ(v, 0.0);
}

TEST(Enhance, OutputLengthMatchesInput) {
  const EnhancementModel<float> m(micro(1, 2), 20);
  for (std::size_t n : {8u, 1600u, 16000u, 16001u}) EXPECT_EQ(m.enhance(random_audio(n, n)).size(), n);
}

TEST(Enhance, FiniteOnLowSnrInput) {
  const EnhancementModel<float> m(micro(1, 4), 21);
  const auto mix = signal::mix_at_snr(random_audio(4000, 22), random_audio(4000, 23), -5.0);
  for (double v : m.enhance(mix.noisy).samples) EXPECT_TRUE(std::isfinite(v));
}

TEST(Enhance, DeterministicAcrossInstances) {
  const auto x = random_audio(3000, 24);
  const EnhancementModel<float> a(micro(2, 2), 25), b(micro(2, 2), 25);
  EXPECT_EQ(a.enhance(x).samples, b.enhance(x).samples);
  EXPECT_EQ(a.enhance(x).samples, a.enhance(x).samples);
}

// --- probe_stages ---------------------------------------------------------

TEST(Probe, RepeatedModelTraceEndsAtEnhance) {
  const EnhancementModel<float> m(micro(1, 8), 26);
  const auto clean = random_audio(2000, 27);
  const auto noisy = signal::mix_at_snr(clean, random_audio(2000, 28), 0.0).noisy;
  const auto traces = m.probe_stages(noisy, &clean);
  ASSERT_EQ(traces.size(), 8u);
  EXPECT_EQ(traces.back().waveform.samples, m.enhance(noisy).samples);
  for (std::size_t s = 0; s < 8; ++s) {
    EXPECT_EQ(traces[s].stage, s + 1);
    ASSERT_TRUE(traces[s].si_sdr_db.has_value());
    EXPECT_EQ(*traces[s].si_sdr_db, signal::si_sdr(traces[s].waveform, clean));
  }
}

TEST(Probe, StackedAndRepeatedCount) {
  const EnhancementModel<float> m(micro(4, 4), 29);
  const auto traces = m.probe_stages(random_audio(500, 30));
  EXPECT_EQ(traces.size(), 16u);
  EXPECT_FALSE(traces.front().si_sdr_db.has_value());
  EXPECT_FALSE(traces.front().waveform.empty());
}

TEST(Probe, EmptyInputThrows) {
  const EnhancementModel<float> m(micro(), 31);
  EXPECT_THROW(m.probe_stages(signal::AudioBuffer()), ShapeError);
}

// --- parameters -----------------------------------------------------------

TEST(Parameters, CardinalityIndependentOfRepeats) {
  for (std::size_t b : {1u, 2u, 3u}) {
    std::set<std::size_t> counts, tensors;
    for (std::size_t r : {1u, 2u, 5u}) {
      const EnhancementModel<float> m(micro(b, r));
      counts.insert(m.parameter_count());
      tensors.insert(m.parameters().size());
    }
    EXPECT_EQ(counts.size(), 1u);
    EXPECT_EQ(tensors.size(), 1u);
  }
}

TEST(Parameters, NamesAreUnique) {
  const EnhancementModel<float> m(micro(3, 1));
  std::set<std::string> names;
  for (const auto& p : m.parameters()) EXPECT_TRUE(names.insert(p.name()).second) << p.name();
}

TEST(Gradients, SharedBlockGradientIsSumOfStageContributions) {
  // Full backward through R=3 repeats versus R replays in which only stage r
  // uses the live block (its input detached) and all other stages use a
  // frozen copy of the same weights.
  const std::size_t repeats = 3;
  const auto cfg = micro(1, repeats);
  EnhancementModel<double> live(cfg, 32);
  EnhancementModel<double> frozen(cfg, 0);
  copy_codec_weights(live, frozen);
  copy_block_weights(live, 0, frozen, 0);
  for (auto& p : frozen.parameters()) p.set_requires_grad(false);
  const auto x = EnhancementModel<double>::to_tensor(random_audio(40, 33));
  const auto loss_of = [&](const ad::Tensor<double>& wav) { return ad::sum(ad::square(wav)); };

  live.zero_grads();
  {
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    tape.backward(loss_of(frozen.decode(live.run_stages(frozen.encode(ad::stft(x, cfg.stft))).output, 40)));
  }
  std::vector<double> full;
  for (const auto& p : live.parameters()) {
    if (p.name().rfind("blocks.", 0) == 0) full.insert(full.end(), p.grad().begin(), p.grad().end());
  }

  std::vector<double> summed(full.size(), 0.0);
  for (std::size_t r = 0; r < repeats; ++r) {
    live.zero_grads();
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    auto y = frozen.encode(ad::stft(x, cfg.stft));
    for (std::size_t s = 0; s < repeats; ++s) y = s == r ? live.tf_block(ad::detach(y), 0) : frozen.tf_block(y, 0);
    tape.backward(loss_of(frozen.decode(y, 40)));
    std::size_t i = 0;
    for (const auto& p : live.parameters()) {
      if (p.name().rfind("blocks.", 0) != 0) continue;
      for (double g : p.grad()) summed[i++] += g;
    }
  }
  EXPECT_LT(testing::relative_error(full, summed), 1e-10);
}

TEST(Gradients, EndToEndMatchesFiniteDifferences) {
  // C=8, T=6, F=9, B=1, R=2: 40 samples at hop 8 give 6 frames.
  auto model = EnhancementModel<double>(micro(1, 2), 34);
  const auto x = EnhancementModel<double>::to_tensor(random_audio(40, 35));
  const auto ref = EnhancementModel<double>::to_tensor(random_audio(40, 36));
  const auto loss = [&] { return ad::sum(ad::square(ad::sub(model.forward(x), ref))); };
  EXPECT_LT(testing::gradient_error<double>(loss, model.parameters(), 1e-5), 1e-4);
}

// --- checkpoints ----------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  auto cfg = micro(2, 3, Fusion::kSummation);
  cfg.dense_depth = 1;
  const EnhancementModel<float> m(cfg, 37);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(m, path);
  const auto back = load_checkpoint<float>(path);
  EXPECT_EQ(back.config(), cfg);
  ASSERT_EQ(back.parameters().size(), m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto a = m.parameters()[i].values(), b = back.parameters()[i].values();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  const auto x = random_audio(700, 38);
  EXPECT_EQ(back.enhance(x).samples, m.enhance(x).samples);
}

TEST(Checkpoint, HeaderLayout) {
  const EnhancementModel<float> m(micro(), 39);
  const auto bytes = encode_checkpoint(snapshot(m));
  EXPECT_EQ(bytes.substr(0, 4), "SERB");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, 1u);
}

TEST(Checkpoint, CorruptMagicIsRejected) {
  const EnhancementModel<float> m(micro(), 40);
  auto bytes = encode_checkpoint(snapshot(m));
  bytes[0] = 'X';
  try {
    decode_checkpoint(bytes, "bad.ckpt");
    FAIL() << "expected an error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad checkpoint magic"), std::string::npos);
  }
}

TEST(Checkpoint, TruncationAndVersionAreRejected) {
  const EnhancementModel<float> m(micro(), 41);
  const auto bytes = encode_checkpoint(snapshot(m));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3), "t"), IoError);
  auto v2 = bytes;
  v2[4] = 2;
  EXPECT_THROW(decode_checkpoint(v2, "t"), IoError);
  EXPECT_THROW(decode_checkpoint(bytes + "x", "t"), IoError);
}

TEST(Checkpoint, BlockCountMismatchIsAShapeError) {
  const auto path = temp_path("b4.ckpt");
  save_checkpoint(EnhancementModel<float>(micro(4, 1), 42), path);
  try {
    load_checkpoint<float>(path, micro(8, 1));
    FAIL() << "expected an error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("shape disagreement"), std::string::npos);
  }
}

TEST(Checkpoint, WidthMismatchIsAShapeError) {
  const auto path = temp_path("c8.ckpt");
  save_checkpoint(EnhancementModel<float>(micro(), 43), path);
  auto wider = micro();
  wider.channels = 12;
  EXPECT_THROW(load_checkpoint<float>(path, wider), ShapeError);
}

}  // namespace
}  // namespace serb::model
