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

// Acceptance harness: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Artifacts (curves, comparison CSV,
// training runs) go under --work-dir.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "serb/serb.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace serb;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

model::ModelConfig table_config(std::size_t b, std::size_t r) {
  model::ModelConfig c;
  c.blocks = b;
  c.repeats = r;
  return c;
}

// --- 1 --------------------------------------------------------------------

Outcome params_table() {
  struct Row {
    std::size_t b, r;
    double target_m;
  };
  const Row rows[] = {{1, 1, 0.5}, {4, 1, 1.9}, {8, 1, 3.7}, {12, 1, 5.6},
                      {16, 1, 7.4}, {2, 8, 0.9}, {4, 4, 1.9}, {8, 2, 3.7}};
  bool pass = true;
  std::string detail;
  for (const auto& row : rows) {
    const double got = static_cast<double>(complexity::count_params(table_config(row.b, row.r)).total_params) / 1e6;
    const double rel = (got - row.target_m) / row.target_m;
    const bool ok = std::abs(rel) <= 0.10;
    pass = pass && ok;
    detail += format("B%zuR%zu=%.3fM(%+.1f%%%s) ", row.b, row.r, got, 100.0 * rel, ok ? "" : "!");
  }
  bool invariant = true;
  for (std::size_t b : {1u, 2u, 4u, 8u, 16u}) {
    const auto base = complexity::count_params(table_config(b, 1)).total_params;
    for (std::size_t r : {2u, 4u, 8u, 16u}) {
      invariant = invariant && complexity::count_params(table_config(b, r)).total_params == base;
    }
  }
  detail += invariant ? "R-invariant" : "NOT R-invariant";
  return {pass && invariant, detail};
}

// --- 2 --------------------------------------------------------------------

Outcome macs_table() {
  const double b1r1 = complexity::count_macs(table_config(1, 1)).macs_per_second / 1e9;
  const bool near = std::abs(b1r1 - 8.7) / 8.7 <= 0.15;
  const double m16 = complexity::count_macs(table_config(16, 1)).macs;
  bool equal = true;
  for (auto [b, r] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 16}, {2, 8}, {4, 4}, {8, 2}}) {
    equal = equal && complexity::count_macs(table_config(b, r)).macs == m16;
  }
  const auto base = complexity::count_macs(table_config(1, 1));
  const double block = base.macs_by_component.at("block");
  bool linear = true;
  for (auto [b, r] : complexity::table_grid()) {
    const double expect = base.macs + static_cast<double>(b * r - 1) * block;
    linear = linear && std::abs(complexity::count_macs(table_config(b, r)).macs - expect) <= 1e-9 * expect;
  }
  return {near && equal && linear,
          format("B1R1=%.3f G/s (%+.1f%%); B*R=16 equal=%s; linear=%s", b1r1, 100.0 * (b1r1 - 8.7) / 8.7,
                 equal ? "yes" : "no", linear ? "yes" : "no")};
}

// --- 3 --------------------------------------------------------------------

Outcome tied_weights() {
  double worst = 0.0;
  for (std::size_t k : {2u, 3u, 4u}) {
    const model::EnhancementModel<float> repeated(table_config(1, k), 100 + k);
    model::EnhancementModel<float> stacked(table_config(k, 1), 200 + k);
    model::copy_codec_weights(repeated, stacked);
    for (std::size_t b = 0; b < k; ++b) model::copy_block_weights(repeated, 0, stacked, b);
    const signal::AudioBuffer x(testing::random_vector(4000, 300 + k, -0.5, 0.5));
    const auto a = repeated.enhance(x), s = stacked.enhance(x);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.samples[i] - s.samples[i]));
  }
  return {worst < 1e-6, format("max abs diff %.3g over k=2,3,4", worst)};
}

// --- 4 --------------------------------------------------------------------

Outcome gradients() {
  using T = ad::Tensor<double>;
  using testing::gradient_error;
  using testing::probe_sum;
  using testing::random_param;
  constexpr double eps = 1e-5;
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const std::function<T()>& f, std::vector<T> in) {
    errs.emplace_back(name, gradient_error<double>(f, std::move(in), eps));
  };
  for (int s = 0; s < 5; ++s) {
    auto a = random_param({3, 4}, 10 + s), b = random_param({3, 4}, 20 + s);
    check("add", [&] { return probe_sum(ad::add(a, b), s); }, {a, b});
    check("sub", [&] { return probe_sum(ad::sub(a, b), s); }, {a, b});
    check("mul", [&] { return probe_sum(ad::mul(a, b), s); }, {a, b});
    check("square", [&] { return probe_sum(ad::square(a), s); }, {a});
    check("scale", [&] { return probe_sum(ad::scale(a, 0.7), s); }, {a});
    check("swish", [&] { return probe_sum(ad::swish(a), s); }, {a});
    check("swiglu_gate", [&] { return probe_sum(ad::swiglu_gate(a, b), s); }, {a, b});
    auto pos = random_param({5}, 30 + s, "p", 0.1, 2.0);
    check("abs", [&] { return probe_sum(ad::abs(pos), s); }, {pos});
    check("sum", [&] { return ad::sum(ad::square(a)); }, {a});
    check("mean", [&] { return ad::mean(ad::square(a)); }, {a});
    check("reshape", [&] { return probe_sum(ad::reshape(a, ad::Shape{2, 6}), s); }, {a});
    auto c3 = random_param({2, 3, 4}, 40 + s);
    check("permute", [&] { return probe_sum(ad::permute(c3, {2, 0, 1}), s); }, {c3});
    check("slice_last", [&] { return probe_sum(ad::slice_last(c3, 1, 3), s); }, {c3});
    check("concat0", [&] { return probe_sum(ad::concat0(std::vector<T>{c3, c3}), s); }, {c3});
    auto w = random_param({4, 3}, 50 + s), bias = random_param({3}, 60 + s), g = random_param({4}, 70 + s);
    check("linear", [&] { return probe_sum(ad::linear(a, w, bias), s); }, {a, w, bias});
    check("rms_norm", [&] { return probe_sum(ad::rms_norm(a, g), s); }, {a, g});
    check("magnitude", [&] { return probe_sum(ad::magnitude(a, b), s); }, {a, b});
    auto wc = random_param({3, 4, 2}, 80 + s), bc = random_param({2}, 90 + s);
    check("conv1d", [&] { return probe_sum(ad::conv1d(c3, wc, bc, 1 + s % 2), s); }, {c3, wc, bc});
    auto y1 = random_param({2, 3, 2}, 100 + s), wt = random_param({3, 2, 4}, 110 + s), bt = random_param({4}, 120 + s);
    check("deconv1d", [&] { return probe_sum(ad::deconv1d(y1, wt, bt, 1), s); }, {y1, wt, bt});
    auto wa = random_param({3, 2, 3}, 130 + s), ba = random_param({3}, 140 + s);
    check("conv1d_along_axis", [&] { return probe_sum(ad::conv1d_along_axis(c3, ad::Axis::kTime, wa, ba, 1), s); },
          {c3, wa, ba});
    auto w2 = random_param({3, 2, 3, 3}, 150 + s), b2 = random_param({3}, 160 + s);
    const auto geom = ad::Conv2dGeometry::same(3, 3);
    check("conv2d", [&] { return probe_sum(ad::conv2d(c3, w2, b2, geom), s); }, {c3, w2, b2});
    auto y2 = random_param({3, 3, 4}, 170 + s), bx = random_param({2}, 180 + s);
    check("deconv2d", [&] { return probe_sum(ad::deconv2d(y2, w2, bx, geom, std::nullopt), s); }, {y2, w2, bx});
    auto seq = random_param({2, 3, 4}, 190 + s);
    ad::AttentionParams<double> p{random_param({4, 4}, 200 + s), random_param({4}, 210 + s),
                                  random_param({4, 4}, 220 + s), random_param({4}, 230 + s),
                                  random_param({4, 4}, 240 + s), random_param({4}, 250 + s),
                                  random_param({4, 4}, 260 + s), random_param({4}, 270 + s)};
    check("multi_head_attention", [&] { return probe_sum(ad::multi_head_attention(seq, p, 2), s); },
          {seq, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo});
    const signal::StftConfig cfg{16, 4};
    auto wav = random_param({30}, 280 + s);
    check("stft", [&] { return probe_sum(ad::ri_magnitude(ad::stft(wav, cfg)), s); }, {wav});
    auto ri = random_param({2, cfg.num_frames(30), cfg.num_bins()}, 290 + s);
    check("istft", [&] { return probe_sum(ad::istft(ri, cfg, 30), s); }, {ri});
  }
  model::ModelConfig micro;
  micro.blocks = 1;
  micro.repeats = 2;
  micro.channels = 8;
  micro.hidden = 6;
  micro.heads = 2;
  micro.stft = signal::StftConfig{16, 8};  // F = 9; 40 samples give T = 6
  model::EnhancementModel<double> net(micro, 7);
  const auto x = T(ad::Shape{40}, testing::random_vector(40, 8, -0.5, 0.5));
  const auto ref = T(ad::Shape{40}, testing::random_vector(40, 9, -0.5, 0.5));
  check("end-to-end C8 B1 R2", [&] { return train::total_loss(net.forward(x), ref, {1.0, 0.0}); }, net.parameters());
  check("end-to-end C8 B1 R2 (mr-tf loss)",
        [&] { return train::loss_mr_tf_l1(net.forward(x), ref, std::vector<std::size_t>{16, 32}); }, net.parameters());

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errs) {
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
  }
  return {worst < 1e-4, format("%zu checks; worst rel err %.2e (%s)", errs.size(), worst, worst_name.c_str())};
}

// --- 5 --------------------------------------------------------------------

Outcome signal_layer() {
  const signal::AudioBuffer x(testing::random_vector(16000, 1, -0.5, 0.5));
  const auto y = signal::istft(signal::stft(x), x.size());
  const double round_trip = testing::relative_error(x.samples, y.samples);
  const signal::AudioBuffer est(testing::random_vector(16000, 2, -0.5, 0.5));
  signal::AudioBuffer ref = x;
  for (std::size_t i = 0; i < ref.size(); ++i) ref.samples[i] += 0.3 * est.samples[i];
  const double base = signal::si_sdr(est, ref);
  double drift = 0.0;
  for (double s : {1e-3, 0.5, 3.0, 1e3}) {
    signal::AudioBuffer scaled = est;
    for (double& v : scaled.samples) v *= s;
    drift = std::max(drift, std::abs(signal::si_sdr(scaled, ref) - base));
  }
  double mix_err = 0.0;
  for (double snr : {-5.0, 0.0, 5.0, 10.0, 15.0}) {
    const auto m = signal::mix_at_snr(x, est, snr);
    mix_err = std::max(mix_err, std::abs(signal::snr_db(x, m.scaled_noise) - snr));
  }
  return {round_trip < 1e-6 && drift < 1e-9 && mix_err < 1e-9,
          format("round trip %.2e; SI-SDR scale drift %.2e dB; mix error %.2e dB", round_trip, drift, mix_err)};
}

// --- 6, 7, 8 --------------------------------------------------------------

struct Experiment {
  model::ModelConfig model;
  train::TrainConfig train;
  train::SynthSpec data;
  train::SynthSpec held_out;
};

Experiment desk_experiment() {
  Experiment e;
  e.model.blocks = 1;
  e.model.repeats = 4;
  e.model.fusion = model::Fusion::kDirect;
  e.model.channels = 32;
  e.model.hidden = 32;
  e.model.heads = 4;
  e.train.lr = 2e-3;
  e.train.epochs = 4;
  e.train.steps_per_epoch = 500;
  e.train.segment_s = 0.5;
  e.train.seed = 1;
  e.train.val_fraction = 0.1;
  e.data.num_utterances = 80;
  e.data.duration_s = 2.0;
  e.data.seed = 5;
  e.held_out = e.data;
  e.held_out.num_utterances = 16;
  e.held_out.seed = 1005;
  return e;
}

struct HeldOutScore {
  double noisy_db = 0.0;
  double enhanced_db = 0.0;
  std::vector<std::vector<double>> stage_db;  // [utterance][stage]
  std::vector<double> noisy_each;
};

HeldOutScore score_held_out(const model::EnhancementModel<float>& net, const std::vector<train::Utterance>& data) {
  HeldOutScore s;
  for (const auto& u : data) {
    const auto mix = signal::mix_at_snr(u.clean, u.noise, 0.0);
    const double noisy = signal::si_sdr(mix.noisy, u.clean);
    const double enhanced = signal::si_sdr(net.enhance(mix.noisy), u.clean);
    s.noisy_db += noisy / static_cast<double>(data.size());
    s.enhanced_db += enhanced / static_cast<double>(data.size());
    s.noisy_each.push_back(noisy);
    std::vector<double> stages;
    for (const auto& t : net.probe_stages(mix.noisy, &u.clean)) stages.push_back(*t.si_sdr_db);
    s.stage_db.push_back(stages);
  }
  return s;
}

struct TrainedRun {
  train::TrainResult result;
  HeldOutScore held_out;
  double seconds = 0.0;
};

TrainedRun train_and_score(const Experiment& e, model::Fusion fusion, const fs::path& dir) {
  auto cfg = e.model;
  cfg.fusion = fusion;
  const auto t0 = std::chrono::steady_clock::now();
  model::EnhancementModel<float> net(cfg, e.train.seed);
  train::TrainOptions opts;
  opts.output_dir = dir;
  opts.on_epoch = [&](const train::EpochMetrics& m) {
    std::fprintf(stderr, "  [%s] %s", model::to_string(fusion).c_str(), train::to_jsonl(m).c_str());
  };
  TrainedRun run;
  run.result = train::train_model(net, e.train, train::synth_dataset(e.data), opts);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto best = model::load_checkpoint<float>(dir / "best.ckpt");
  run.held_out = score_held_out(best, train::synth_dataset(e.held_out));
  return run;
}

Outcome desk_training(const TrainedRun& dc, const Experiment& e) {
  const double delta = dc.held_out.enhanced_db - dc.held_out.noisy_db;
  return {delta >= 5.0 && dc.result.step >= 2000 && e.data.num_utterances >= 64,
          format("B1R4 DC C32, %llu steps, %zu utterances, %.0f s: held-out noisy %.2f dB -> enhanced %.2f dB "
                 "(delta %+.2f dB)",
                 static_cast<unsigned long long>(dc.result.step), e.data.num_utterances, dc.seconds,
                 dc.held_out.noisy_db, dc.held_out.enhanced_db, delta)};
}

Outcome progressive(const TrainedRun& dc, const fs::path& work) {
  const auto& st = dc.held_out.stage_db;
  const std::size_t stages = st.front().size();
  std::vector<double> medians;
  std::ofstream curve(work / "stage_curve.csv", std::ios::binary);
  curve << "stage,median_si_sdr_db\n";
  curve << "0," << format("%.6f", median(dc.held_out.noisy_each)) << "\n";
  for (std::size_t s = 0; s < stages; ++s) {
    std::vector<double> col;
    for (const auto& u : st) col.push_back(u[s]);
    medians.push_back(median(col));
    curve << s + 1 << "," << format("%.6f", medians.back()) << "\n";
  }
  const double noisy = median(dc.held_out.noisy_each);
  std::string c;
  for (double m : medians) c += format("%.2f ", m);
  const double gain = medians.back() - medians.front();
  return {gain >= 3.0 && medians.front() > noisy,
          format("median curve noisy %.2f | %s dB; final - stage1 = %+.2f dB", noisy, c.c_str(), gain)};
}

Outcome fusion_harness(const TrainedRun& dc, const TrainedRun& sc, const Experiment& e, const fs::path& work) {
  {
    std::ofstream csv(work / "fusion_comparison.csv", std::ios::binary);
    csv << "fusion,steps,best_val_si_sdr_db,held_out_noisy_si_sdr_db,held_out_enhanced_si_sdr_db,"
           "held_out_delta_si_sdr_db\n";
    for (const auto* run : {&dc, &sc}) {
      csv << (run == &dc ? "DC" : "SC") << "," << run->result.step << ","
          << format("%.6f,%.6f,%.6f,%.6f", run->result.best_val_si_sdr_db, run->held_out.noisy_db,
                    run->held_out.enhanced_db, run->held_out.enhanced_db - run->held_out.noisy_db)
          << "\n";
    }
  }
  // Structural relation at R=1 with shared weights.
  auto cfg = e.model;
  cfg.repeats = 1;
  cfg.fusion = model::Fusion::kDirect;
  const model::EnhancementModel<float> dcm(cfg, 3);
  cfg.fusion = model::Fusion::kSummation;
  const model::EnhancementModel<float> scm(cfg, 3);
  const auto spec = signal::stft(signal::AudioBuffer(testing::random_vector(8000, 4, -0.5, 0.5)));
  const auto x0 = model::encode(spec, dcm);
  const auto ydc = dcm.run_stages(x0).output, ysc = scm.run_stages(x0).output;
  bool exact = true;
  for (std::size_t i = 0; i < x0.size(); ++i) exact = exact && ysc[i] == ydc[i] + x0[i];
  return {exact && dc.result.step == sc.result.step,
          format("DC delta %+.2f dB, SC delta %+.2f dB (fusion_comparison.csv); SC = DC + x0 at R=1: %s",
                 dc.held_out.enhanced_db - dc.held_out.noisy_db, sc.held_out.enhanced_db - sc.held_out.noisy_db,
                 exact ? "exact" : "MISMATCH")};
}

// --- 9 --------------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  Experiment e = desk_experiment();
  e.model.channels = 16;
  e.model.hidden = 16;
  e.model.repeats = 2;
  e.train.epochs = 2;
  e.train.steps_per_epoch = 10;
  e.data.num_utterances = 8;
  e.data.duration_s = 1.0;
  const auto data = train::synth_dataset(e.data);
  for (const char* name : {"det_a", "det_b"}) {
    model::EnhancementModel<float> net(e.model, e.train.seed);
    train::TrainOptions opts;
    opts.output_dir = work / name;
    train::train_model(net, e.train, data, opts);
  }
  bool same = true;
  for (const char* f : {"metrics.jsonl", "last.ckpt", "best.ckpt"}) {
    same = same && slurp(work / "det_a" / f) == slurp(work / "det_b" / f) && !slurp(work / "det_a" / f).empty();
  }
  return {same, same ? "metrics.jsonl, last.ckpt and best.ckpt byte-identical across two runs" : "artifacts differ"};
}

// --- 10 -------------------------------------------------------------------

Outcome adamw_convex() {
  using T = ad::Tensor<double>;
  const std::vector<double> target{0.5, -0.25, 1.0, 0.0, -0.75, 0.3};
  std::vector<double> start = target;
  start[2] += 0.6;
  start[4] -= 0.8;  // distance exactly 1
  auto p = T::parameter(ad::Shape{6}, start, "theta");
  std::vector<T> params{p};
  train::AdamWState<double> st;
  const train::AdamWConfig cfg{0.05, 0.9, 0.999, 1e-8, 0.0};
  const T t(ad::Shape{6}, target);
  for (int k = 0; k < 50; ++k) {
    p.zero_grad();
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    tape.backward(ad::sum(ad::square(ad::sub(p, t))));
    train::adamw_step(params, st, cfg, cfg.lr);
  }
  double d = 0.0;
  for (std::size_t i = 0; i < 6; ++i) d += (p[i] - target[i]) * (p[i] - target[i]);
  d = std::sqrt(d);
  return {d < 0.15, format("distance after 50 steps %.4f (from 1.0)", d)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serb acceptance"};
  std::string work_dir = "acceptance_work";
  app.add_option("--work-dir", work_dir, "Directory for training runs and reports");
  CLI11_PARSE(app, argc, argv);
  serb::retain_heap();
  const fs::path work = work_dir;
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("criterion %2d: %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };
  auto guarded = [](const std::function<Outcome()>& f) -> Outcome {
    try {
      return f();
    } catch (const std::exception& e) {
      return {false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "parameter table", guarded(params_table));
  report(2, "MAC table", guarded(macs_table));
  report(3, "tied-weight equivalence", guarded(tied_weights));
  report(4, "gradient soundness", guarded(gradients));
  report(5, "signal layer", guarded(signal_layer));

  const auto e = desk_experiment();
  std::optional<TrainedRun> dc, sc;
  std::string train_error;
  try {
    dc = train_and_score(e, model::Fusion::kDirect, work / "dc");
    sc = train_and_score(e, model::Fusion::kSummation, work / "sc");
  } catch (const std::exception& ex) {
    train_error = std::string("exception: ") + ex.what();
  }
  report(6, "desk-scale training", dc ? desk_training(*dc, e) : Outcome{false, train_error});
  report(7, "progressive refinement", dc ? guarded([&] { return progressive(*dc, work); })
                                         : Outcome{false, train_error});
  report(8, "fusion comparison", dc && sc ? guarded([&] { return fusion_harness(*dc, *sc, e, work); })
                                          : Outcome{false, train_error});
  report(9, "determinism", guarded([&] { return determinism(work); }));
  report(10, "AdamW convex check", guarded(adamw_convex));

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
