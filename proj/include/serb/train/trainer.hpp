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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "serb/model/checkpoint.hpp"
#include "serb/model/network.hpp"
#include "serb/runtime.hpp"
#include "serb/signal/metrics.hpp"
#include "serb/train/adamw.hpp"
#include "serb/train/loss.hpp"
#include "serb/train/synth.hpp"

namespace serb::train {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 100;
  double segment_s = 4.0;
  std::size_t batch = 1;
  double snr_low_db = -5.0;
  double snr_high_db = 15.0;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  double warmup_fraction = 0.05;
  double clip_norm = 5.0;
  double val_fraction = 0.1;
  double val_snr_db = 0.0;
  bool log_wall_time = false;

  std::size_t total_steps() const { return epochs * steps_per_epoch; }

  AdamWConfig optimizer() const { return AdamWConfig{lr, beta1, beta2, 1e-8, weight_decay}; }

  void validate() const {
    optimizer().validate();
    if (snr_low_db > snr_high_db) throw ConfigError("train: snr range low > high");
    if (!(segment_s > 0.0)) throw ConfigError("train: segment_s must be > 0");
    if (batch == 0) throw ConfigError("train: batch must be > 0");
    if (epochs == 0 || steps_per_epoch == 0) throw ConfigError("train: epochs and steps_per_epoch must be > 0");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw ConfigError("train: warmup_fraction must lie in [0, 1]");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("train: val_fraction must lie in [0, 1)");
    if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be > 0");
  }

  /// Linear warmup over the first warmup_fraction of steps, then constant.
  double lr_at(std::uint64_t step) const {
    const auto warmup = static_cast<std::uint64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps())));
    if (warmup == 0 || step >= warmup) return lr;
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"betas", {c.beta1, c.beta2}},
                     {"weight_decay", c.weight_decay},
                     {"epochs", c.epochs},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"segment_s", c.segment_s},
                     {"batch", c.batch},
                     {"snr_range_db", {c.snr_low_db, c.snr_high_db}},
                     {"seed", c.seed},
                     {"loss_weights", {c.loss_weights.time_l1, c.loss_weights.mr_tf_l1}},
                     {"warmup_fraction", c.warmup_fraction},
                     {"clip_norm", c.clip_norm},
                     {"val_fraction", c.val_fraction},
                     {"val_snr_db", c.val_snr_db},
                     {"log_wall_time", c.log_wall_time}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  if (j.contains("betas")) {
    c.beta1 = j.at("betas").at(0).get<double>();
    c.beta2 = j.at("betas").at(1).get<double>();
  }
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.epochs = j.value("epochs", d.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.segment_s = j.value("segment_s", d.segment_s);
  c.batch = j.value("batch", d.batch);
  if (j.contains("snr_range_db")) {
    c.snr_low_db = j.at("snr_range_db").at(0).get<double>();
    c.snr_high_db = j.at("snr_range_db").at(1).get<double>();
  }
  c.seed = j.value("seed", d.seed);
  if (j.contains("loss_weights")) {
    c.loss_weights.time_l1 = j.at("loss_weights").at(0).get<double>();
    c.loss_weights.mr_tf_l1 = j.at("loss_weights").at(1).get<double>();
  }
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.val_snr_db = j.value("val_snr_db", d.val_snr_db);
  c.log_wall_time = j.value("log_wall_time", d.log_wall_time);
  c.validate();
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_si_sdr_db = 0.0;
  std::optional<double> wall_s;
};

/// One JSON-lines record; wall_s is null unless wall time logging is on.
inline std::string to_jsonl(const EpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"val_si_sdr_db", m.val_si_sdr_db}};
  j["wall_s"] = m.wall_s ? nlohmann::json(*m.wall_s) : nlohmann::json(nullptr);
  return j.dump() + "\n";
}

struct TrainOptions {
  std::optional<std::filesystem::path> output_dir;  // metrics.jsonl, last.ckpt, best.ckpt
  std::optional<std::filesystem::path> resume;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::uint64_t step = 0;
  double best_val_si_sdr_db = -signal::kSiSdrCapDb;
  double noisy_val_si_sdr_db = 0.0;
  std::vector<double> step_losses;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded partition: a shuffled val_fraction of the indices (at least one
/// when both sides can be non-empty) goes to validation.
inline DataSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  detail::Rng rng(detail::splitmix64(seed ^ 0x5eedULL));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0.0 && n > 1) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  DataSplit s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

/// Crops [offset, offset + len) with zero padding past the end.
inline signal::AudioBuffer crop(const signal::AudioBuffer& x, std::size_t offset, std::size_t len) {
  std::vector<double> out(len, 0.0);
  for (std::size_t i = 0; i < len && offset + i < x.size(); ++i) out[i] = x.samples[offset + i];
  return signal::AudioBuffer(std::move(out));
}

/// Mixture with a silent-source fallback (noise added unscaled).
inline signal::Mixture safe_mix(const signal::AudioBuffer& clean, const signal::AudioBuffer& noise, double snr) {
  if (signal::power(clean.samples) > 0.0 && signal::power(noise.samples) > 0.0) {
    return signal::mix_at_snr(clean, noise, snr);
  }
  signal::Mixture m;
  m.scaled_noise = noise;
  m.noisy = clean;
  for (std::size_t i = 0; i < noise.size(); ++i) m.noisy.samples[i] += noise.samples[i];
  return m;
}

struct ValidationScore {
  double enhanced_db = 0.0;
  double noisy_db = 0.0;
};

template <class Real>
ValidationScore validate_model(const model::EnhancementModel<Real>& model, const std::vector<Utterance>& data,
                               const std::vector<std::size_t>& indices, double snr_db) {
  ValidationScore s;
  if (indices.empty()) return s;
  for (std::size_t i : indices) {
    const auto mix = signal::mix_at_snr(data[i].clean, data[i].noise, snr_db);
    s.noisy_db += signal::si_sdr(mix.noisy, data[i].clean);
    s.enhanced_db += signal::si_sdr(model.enhance(mix.noisy), data[i].clean);
  }
  s.enhanced_db /= static_cast<double>(indices.size());
  s.noisy_db /= static_cast<double>(indices.size());
  return s;
}

namespace detail {

inline nlohmann::json rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw IoError("checkpoint: corrupt rng state");
}

inline void write_text(const std::filesystem::path& path, const std::string& text, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace detail

/// Model parameters, AdamW moments and loop state in one checkpoint.
template <class Real>
model::CheckpointFile training_snapshot(const model::EnhancementModel<Real>& model, const AdamWState<Real>& opt,
                                        std::uint64_t step, std::size_t epoch, const std::mt19937_64& rng,
                                        double best_val) {
  auto file = model::snapshot(model);
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size() && i < opt.m.size(); ++i) {
    file.records.push_back(model::to_record<Real>("adamw.m." + params[i].name(), params[i].shape(), opt.m[i]));
    file.records.push_back(model::to_record<Real>("adamw.v." + params[i].name(), params[i].shape(), opt.v[i]));
  }
  file.header["train_state"] = {{"step", step},
                                {"epoch", epoch},
                                {"adamw_step", opt.step},
                                {"rng", detail::rng_state(rng)},
                                {"best_val_si_sdr_db", best_val}};
  return file;
}

/// Runs epochs * steps_per_epoch optimizer steps. Each step draws an
/// utterance, an SNR in the configured range and a crop offset, then runs
/// forward, total_loss, backward, global-norm clipping and AdamW. After every
/// epoch the validation split is enhanced at val_snr_db; the best model by
/// mean SI-SDR is kept as best.ckpt.
template <class Real>
TrainResult train_model(model::EnhancementModel<Real>& model, const TrainConfig& cfg,
                        const std::vector<Utterance>& dataset, const TrainOptions& opts = {}) {
  cfg.validate();
  retain_heap();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  const auto split = split_dataset(dataset.size(), cfg.val_fraction, cfg.seed);
  if (split.train.empty()) throw ConfigError("train: no training utterances after the validation split");
  const auto seg_len = static_cast<std::size_t>(std::llround(cfg.segment_s * signal::kSampleRate));
  const auto adam = cfg.optimizer();
  auto& params = model.parameters();

  AdamWState<Real> opt;
  opt.init(params);
  std::mt19937_64 rng(detail::splitmix64(cfg.seed));
  TrainResult result;
  std::size_t start_epoch = 0;

  if (opts.resume) {
    const auto file = model::read_checkpoint_file(*opts.resume);
    model::load_parameters(model, file);
    if (!file.header.contains("train_state")) throw IoError(opts.resume->string() + ": no training state");
    const auto& ts = file.header.at("train_state");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto* m = file.find("adamw.m." + params[i].name());
      const auto* v = file.find("adamw.v." + params[i].name());
      if (!m || !v || m->data.size() != params[i].size() || v->data.size() != params[i].size()) {
        throw ShapeError("checkpoint shape disagreement: optimizer state for " + params[i].name());
      }
      opt.m[i].assign(m->data.begin(), m->data.end());
      opt.v[i].assign(v->data.begin(), v->data.end());
    }
    opt.step = ts.at("adamw_step").get<std::uint64_t>();
    result.step = ts.at("step").get<std::uint64_t>();
    start_epoch = ts.at("epoch").get<std::size_t>();
    result.best_val_si_sdr_db = ts.at("best_val_si_sdr_db").get<double>();
    detail::restore_rng(rng, ts.at("rng").get<std::string>());
  }

  if (opts.output_dir) std::filesystem::create_directories(*opts.output_dir);
  const auto metrics_path = opts.output_dir ? *opts.output_dir / "metrics.jsonl" : std::filesystem::path{};
  if (opts.output_dir && !opts.resume) detail::write_text(metrics_path, "", false);

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
      model.zero_grads();
      double step_loss = 0.0;
      nlohmann::json where{{"epoch", epoch}, {"step", result.step}, {"lr", cfg.lr_at(result.step)}};
      try {
        for (std::size_t b = 0; b < cfg.batch; ++b) {
          const std::size_t utt = split.train[static_cast<std::size_t>(rng() % split.train.size())];
          const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
          const double snr = cfg.snr_low_db + (cfg.snr_high_db - cfg.snr_low_db) * u;
          const auto& item = dataset[utt];
          const std::size_t span = item.clean.size() > seg_len ? item.clean.size() - seg_len + 1 : 1;
          const std::size_t offset = static_cast<std::size_t>(rng() % span);
          where["utterance"] = utt;
          where["utterance_seed"] = item.seed;
          where["snr_db"] = snr;
          where["offset"] = offset;
          const auto clean = crop(item.clean, offset, seg_len);
          const auto mix = safe_mix(clean, crop(item.noise, offset, seg_len), snr);

          ad::Tape<Real> tape;
          ad::TapeScope<Real> scope(tape);
          const auto est = model.forward(model::EnhancementModel<Real>::to_tensor(mix.noisy));
          const auto ref = model::EnhancementModel<Real>::to_tensor(clean);
          auto loss = total_loss(est, ref, cfg.loss_weights);
          const double value = static_cast<double>(loss.item());
          if (!std::isfinite(value)) throw NumericalError("non-finite loss");
          if (cfg.batch > 1) loss = ad::scale(loss, Real(1) / static_cast<Real>(cfg.batch));
          tape.backward(loss);
          step_loss += value / static_cast<double>(cfg.batch);
        }
        clip_grad_norm(params, cfg.clip_norm);
        adamw_step(params, opt, adam, cfg.lr_at(result.step));
      } catch (const NumericalError& e) {
        if (opts.output_dir) {
          where["error"] = e.what();
          detail::write_text(*opts.output_dir / "nan_dump.json", where.dump(2) + "\n", false);
        }
        throw NumericalError("training aborted at step " + std::to_string(result.step) + ": " + e.what());
      }
      ++result.step;
      loss_sum += step_loss;
      result.step_losses.push_back(step_loss);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(cfg.steps_per_epoch);
    const auto score = validate_model(model, dataset, split.val, cfg.val_snr_db);
    m.val_si_sdr_db = score.enhanced_db;
    result.noisy_val_si_sdr_db = score.noisy_db;
    if (cfg.log_wall_time) {
      m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    const bool improved = m.val_si_sdr_db > result.best_val_si_sdr_db || m.epoch == 1;
    if (improved) result.best_val_si_sdr_db = m.val_si_sdr_db;
    result.metrics.push_back(m);
    if (opts.output_dir) {
      detail::write_text(metrics_path, to_jsonl(m), true);
      const auto snap = training_snapshot(model, opt, result.step, epoch + 1, rng, result.best_val_si_sdr_db);
      model::write_checkpoint_file(*opts.output_dir / "last.ckpt", snap);
      if (improved) model::write_checkpoint_file(*opts.output_dir / "best.ckpt", snap);
    }
    if (opts.on_epoch) opts.on_epoch(m);
  }
  return result;
}

}  // namespace serb::train
