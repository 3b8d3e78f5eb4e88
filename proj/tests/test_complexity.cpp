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

#include <algorithm>
#include <random>

#include "serb/complexity.hpp"
#include "serb/model/network.hpp"

namespace serb::complexity {
namespace {

using model::Fusion;
using model::ModelConfig;

ModelConfig config(std::size_t b, std::size_t r, Fusion fusion = Fusion::kDirect) {
  ModelConfig c;
  c.blocks = b;
  c.repeats = r;
  c.fusion = fusion;
  return c;
}

std::vector<ModelConfig> random_configs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::vector<ModelConfig> out;
  for (std::size_t i = 0; i < n; ++i) {
    ModelConfig c;
    c.heads = pick(1, 3);
    c.channels = c.heads * pick(1, 6);
    c.hidden = pick(1, 12);
    c.kernel = 2 * pick(0, 2) + 1;
    c.blocks = pick(1, 4);
    c.repeats = pick(1, 4);
    c.dense_depth = pick(0, 2);
    c.fusion = pick(0, 1) ? Fusion::kSummation : Fusion::kDirect;
    c.stft = signal::StftConfig{std::size_t{1} << pick(4, 6), 0};
    c.stft.hop = c.stft.win_len / 4;
    out.push_back(c);
  }
  return out;
}

/// MACs from the instantiated weights: every matrix-like weight is applied
/// once per time-frequency position of every stage that uses it; attention
/// adds QK^T and AV products per sequence.
double enumerated_macs(const ModelConfig& cfg, std::size_t frames) {
  const model::EnhancementModel<float> m(cfg);
  const double t = static_cast<double>(frames), f = static_cast<double>(cfg.stft.num_bins());
  const double c = static_cast<double>(cfg.channels);
  double codec = 0.0, block = 0.0;
  for (const auto& p : m.parameters()) {
    if (p.rank() < 2) continue;  // biases and norm gains
    const double work = static_cast<double>(p.size()) * t * f;
    (p.name().rfind("blocks.", 0) == 0 ? block : codec) += work;
  }
  const double per_application = block / static_cast<double>(cfg.blocks) + 2.0 * t * f * f * c + 2.0 * f * t * t * c;
  return codec + static_cast<double>(cfg.stages()) * per_application;
}

TEST(Params, MatchInstantiatedModel) {
  for (const auto& c : random_configs(16, 1)) {
    const model::EnhancementModel<float> m(c);
    EXPECT_EQ(count_params(c).total_params, m.parameter_count());
  }
  EXPECT_EQ(count_params(ModelConfig{}).total_params, model::EnhancementModel<float>(ModelConfig{}).parameter_count());
}

TEST(Params, ComponentsSumToTotal) {
  for (const auto& c : random_configs(12, 2)) {
    const auto r = count_params(c);
    EXPECT_EQ(r.params_by_component.at("encoder") + c.blocks * r.params_by_component.at("block") +
                  r.params_by_component.at("decoder"),
              r.total_params);
  }
}

TEST(Params, IndependentOfRepeatsAndFusion) {
  for (std::size_t b : {1u, 4u, 8u}) {
    const auto base = count_params(config(b, 1)).total_params;
    for (std::size_t r : {2u, 4u, 16u}) {
      EXPECT_EQ(count_params(config(b, r)).total_params, base);
      EXPECT_EQ(count_params(config(b, r, Fusion::kSummation)).total_params, base);
    }
  }
}

TEST(Params, AdditiveInBlocks) {
  const auto p1 = count_params(config(1, 1)).total_params;
  const auto p2 = count_params(config(2, 1)).total_params;
  for (std::size_t b = 3; b <= 16; ++b) EXPECT_EQ(count_params(config(b, 1)).total_params, p1 + (b - 1) * (p2 - p1));
}

TEST(Macs, MatchEnumeratedOracle) {
  for (const auto& c : random_configs(12, 3)) {
    const auto r = count_macs(c, 0.05);
    EXPECT_NEAR(r.macs, enumerated_macs(c, r.frames), 1e-9 * r.macs);
  }
}

TEST(Macs, LinearInStageCount) {
  const auto base = count_macs(config(1, 1));
  const double block = base.macs_by_component.at("block");
  for (auto [b, r] : table_grid()) {
    EXPECT_NEAR(count_macs(config(b, r)).macs, base.macs + static_cast<double>(b * r - 1) * block, 1e-6 * base.macs);
  }
}

TEST(Macs, EqualForEqualStageCount) {
  const double m16 = count_macs(config(16, 1)).macs;
  for (auto [b, r] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 4}, {2, 8}, {8, 2}, {1, 16}}) {
    EXPECT_DOUBLE_EQ(count_macs(config(b, r)).macs, m16);
  }
}

TEST(Macs, PerSecondScalesWithDuration) {
  const auto one = count_macs(config(1, 1), 1.0);
  EXPECT_EQ(one.frames, 126u);
  EXPECT_EQ(one.bins, 129u);
  EXPECT_DOUBLE_EQ(one.macs_per_second, one.macs);
}

TEST(Sweep, RepeatingTradesParamsForCompute) {
  const auto b4r4 = count_macs(config(4, 4)), b16 = count_macs(config(16, 1));
  EXPECT_DOUBLE_EQ(b4r4.macs, b16.macs);
  EXPECT_LT(b4r4.total_params, b16.total_params);
  EXPECT_LT(static_cast<double>(b4r4.total_params), 0.3 * static_cast<double>(b16.total_params));
}

TEST(Sweep, EmptyListIsHeaderOnly) { EXPECT_EQ(table_sweep({}), "B,R,params,macs_g_per_s\n"); }

TEST(Sweep, RowsFollowInputOrder) {
  std::vector<ModelConfig> configs;
  for (auto [b, r] : table_grid()) configs.push_back(config(b, r));
  const auto csv = table_sweep(configs);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  EXPECT_EQ(csv.substr(0, csv.find('\n', csv.find('\n') + 1) + 1), "B,R,params,macs_g_per_s\n" + csv_row(config(1, 1)));
  EXPECT_EQ(table_sweep(configs), csv);
}

TEST(Sweep, RowFormat) {
  const auto row = csv_row(config(4, 4));
  const auto r = count_macs(config(4, 4));
  char expect[128];
  std::snprintf(expect, sizeof(expect), "4,4,%llu,%.4f\n", static_cast<unsigned long long>(r.total_params),
                r.macs_per_second / 1e9);
  EXPECT_EQ(row, expect);
}

TEST(Sweep, InvalidConfigThrows) {
  auto c = config(1, 1);
  c.channels = 63;
  EXPECT_THROW(count_params(c), ConfigError);
}

}  // namespace
}  // namespace serb::complexity
