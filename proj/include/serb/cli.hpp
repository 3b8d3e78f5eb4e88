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
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "serb/serb.hpp"

namespace serb::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kInputError = 2, kNumericalError = 3 };

struct ExperimentConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  train::SynthSpec data;
  fs::path output_dir = "run";
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"model", c.model}, {"train", c.train}, {"data", c.data}, {"output_dir", c.output_dir.string()}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  c.model = j.value("model", nlohmann::json::object()).get<model::ModelConfig>();
  c.train = j.value("train", nlohmann::json::object()).get<train::TrainConfig>();
  c.data = j.value("data", nlohmann::json::object()).get<train::SynthSpec>();
  c.output_dir = j.value("output_dir", std::string("run"));
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

/// Worker count: SERB_THREADS when set, otherwise the hardware count.
inline std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SERB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = std::min(n, static_cast<std::size_t>(v));
  }
  return n;
}

/// Runs fn(i) for i in [0, n) over worker_count() threads; rethrows the
/// first exception after all workers join.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// RFC-4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

struct ManifestRow {
  fs::path clean;
  fs::path noise;
  std::uint64_t seed = 0;
};

/// Reads clean_path,noise_path,seed rows; relative paths resolve against
/// the manifest's directory.
inline std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<ManifestRow> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = parse_csv_line(line);
    if (header) {
      header = false;
      if (f.size() >= 2 && f[0] == "clean_path") continue;
    }
    if (f.size() != 3) throw IoError(path.string() + ": expected 3 fields per manifest row");
    ManifestRow r;
    r.clean = fs::path(f[0]).is_absolute() ? fs::path(f[0]) : path.parent_path() / f[0];
    r.noise = fs::path(f[1]).is_absolute() ? fs::path(f[1]) : path.parent_path() / f[1];
    try {
      r.seed = std::stoull(f[2]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ": bad seed field '" + f[2] + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<double> parse_number_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !std::isfinite(v)) {
      throw ConfigError(std::string("invalid ") + what + " entry '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

/// "standard" or a comma list of BxR tokens, e.g. "1x4,2x8".
inline std::vector<std::pair<std::size_t, std::size_t>> parse_grid(const std::string& text) {
  if (text == "standard") return complexity::table_grid();
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find_first_of("xX");
    const auto digits = [](const std::string& s) {
      return !s.empty() && s.size() < 7 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    if (x == std::string::npos || !digits(item.substr(0, x)) || !digits(item.substr(x + 1))) {
      throw ConfigError("malformed grid entry '" + item + "' (expected BxR, e.g. 1x4)");
    }
    const auto b = std::stoul(item.substr(0, x));
    const auto r = std::stoul(item.substr(x + 1));
    if (b == 0 || r == 0) throw ConfigError("malformed grid entry '" + item + "': B and R must be >= 1");
    out.emplace_back(b, r);
  }
  if (out.empty()) throw ConfigError("empty grid spec");
  return out;
}

/// 8-bit binary PGM, width = frames, height = bins (highest bin on top),
/// log magnitude normalized to the file's own range.
inline std::string spectrogram_pgm(const signal::Spectrogram& spec) {
  const std::size_t w = spec.num_frames, h = spec.num_bins;
  std::vector<double> db(w * h);
  double lo = 1e300, hi = -1e300;
  for (std::size_t t = 0; t < w; ++t) {
    for (std::size_t f = 0; f < h; ++f) {
      const double m = std::hypot(spec.re(t, f), spec.im(t, f));
      const double v = 20.0 * std::log10(m + 1e-12);
      db[t * h + f] = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const double range = hi > lo ? hi - lo : 1.0;
  for (std::size_t row = 0; row < h; ++row) {
    const std::size_t f = h - 1 - row;
    for (std::size_t t = 0; t < w; ++t) {
      const double norm = (db[t * h + f] - lo) / range;
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * norm))));
    }
  }
  return out;
}

inline void cmd_synth(const fs::path& spec_path, const fs::path& out_dir, std::ostream& out) {
  const auto spec = read_json(spec_path).get<train::SynthSpec>();
  ensure_dir(out_dir);
  std::vector<std::string> rows(spec.num_utterances);
  parallel_for(spec.num_utterances, [&](std::size_t i) {
    const auto u = train::synth_utterance(spec, train::utterance_seed(spec.seed, i));
    char name[64];
    std::snprintf(name, sizeof(name), "clean_%04zu.wav", i);
    const std::string clean = name;
    std::snprintf(name, sizeof(name), "noise_%04zu.wav", i);
    const std::string noise = name;
    signal::write_wav(out_dir / clean, u.clean);
    signal::write_wav(out_dir / noise, u.noise);
    rows[i] = csv_field(clean) + "," + csv_field(noise) + "," + std::to_string(u.seed) + "\n";
  });
  std::string manifest = "clean_path,noise_path,seed\n";
  for (const auto& r : rows) manifest += r;
  write_text(out_dir / "manifest.csv", manifest);
  out << "wrote " << spec.num_utterances << " utterance pairs to " << out_dir.string() << "\n";
}

inline void cmd_train(const fs::path& config_path, std::optional<std::uint64_t> seed,
                      std::optional<fs::path> resume, std::ostream& out) {
  auto cfg = read_json(config_path).get<ExperimentConfig>();
  if (seed) cfg.train.seed = *seed;
  ensure_dir(cfg.output_dir);
  nlohmann::json resolved = cfg;
  write_text(cfg.output_dir / "config.json", resolved.dump(2) + "\n");
  const auto data = train::synth_dataset(cfg.data);
  model::EnhancementModel<float> net(cfg.model, cfg.train.seed);
  train::TrainOptions opts;
  opts.output_dir = cfg.output_dir;
  opts.resume = resume;
  opts.on_epoch = [&out](const train::EpochMetrics& m) { out << train::to_jsonl(m) << std::flush; };
  const auto result = train::train_model(net, cfg.train, data, opts);
  out << "finished at step " << result.step << "; noisy validation SI-SDR " << fmt(result.noisy_val_si_sdr_db)
      << " dB; best " << fmt(result.best_val_si_sdr_db) << " dB\n";
}

struct EvalRow {
  std::string clean_path;
  double snr_db = 0.0;
  double noisy_si_sdr = 0.0;
  double enhanced_si_sdr = 0.0;
  double spectral_l1 = 0.0;
};

inline std::string eval_header() {
  return "utterance,clean_path,snr_db,noisy_si_sdr_db,enhanced_si_sdr_db,delta_si_sdr_db,spectral_l1\n";
}

inline std::string eval_line(const std::string& id, const EvalRow& r) {
  return id + "," + csv_field(r.clean_path) + "," + fmt(r.snr_db) + "," + fmt(r.noisy_si_sdr) + "," +
         fmt(r.enhanced_si_sdr) + "," + fmt(r.enhanced_si_sdr - r.noisy_si_sdr) + "," + fmt(r.spectral_l1) + "\n";
}

inline signal::AudioBuffer read_wav_checked(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("missing file " + p.string());
  return signal::read_wav(p);
}

/// Per-utterance rows in manifest order followed by one aggregate row per
/// SNR (means of the rows above it).
inline std::string cmd_eval(const std::optional<fs::path>& ckpt, const fs::path& manifest,
                            const std::vector<double>& snrs, bool passthrough) {
  if (!fs::exists(manifest)) throw IoError("missing manifest " + manifest.string());
  std::optional<model::EnhancementModel<float>> net;
  if (!passthrough) {
    if (!ckpt) throw ConfigError("eval: --ckpt is required unless --passthrough is given");
    if (!fs::exists(*ckpt)) throw IoError("missing checkpoint " + ckpt->string());
    net.emplace(model::load_checkpoint<float>(*ckpt));
  }
  const auto rows = read_manifest(manifest);
  if (rows.empty()) throw IoError(manifest.string() + ": no utterances");
  std::vector<EvalRow> results(rows.size() * snrs.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto clean = read_wav_checked(rows[i].clean);
    const auto noise = read_wav_checked(rows[i].noise);
    for (std::size_t k = 0; k < snrs.size(); ++k) {
      const auto mix = signal::mix_at_snr(clean, noise, snrs[k]);
      const auto enhanced = passthrough ? mix.noisy : net->enhance(mix.noisy);
      auto& r = results[k * rows.size() + i];
      r.clean_path = rows[i].clean.filename().string();
      r.snr_db = snrs[k];
      r.noisy_si_sdr = signal::si_sdr(mix.noisy, clean);
      r.enhanced_si_sdr = signal::si_sdr(enhanced, clean);
      r.spectral_l1 = signal::spectral_l1_distance(enhanced, clean);
    }
  });
  std::string csv = eval_header();
  for (std::size_t k = 0; k < snrs.size(); ++k) {
    EvalRow mean;
    mean.snr_db = snrs[k];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = results[k * rows.size() + i];
      csv += eval_line(std::to_string(i), r);
      mean.noisy_si_sdr += r.noisy_si_sdr;
      mean.enhanced_si_sdr += r.enhanced_si_sdr;
      mean.spectral_l1 += r.spectral_l1;
    }
    const auto n = static_cast<double>(rows.size());
    mean.noisy_si_sdr /= n;
    mean.enhanced_si_sdr /= n;
    mean.spectral_l1 /= n;
    csv += eval_line("mean", mean);
  }
  return csv;
}

/// Writes stages.csv and stage_NN.pgm under out_dir; returns the CSV.
inline std::string cmd_probe(const fs::path& ckpt, const fs::path& clean_path, const fs::path& noise_path,
                             double snr, const fs::path& out_dir) {
  if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt.string());
  const auto clean = read_wav_checked(clean_path);
  const auto noise = read_wav_checked(noise_path);
  if (clean.empty() || noise.empty()) throw ShapeError("probe: stage trace disabled for zero-length audio");
  const auto net = model::load_checkpoint<float>(ckpt);
  const auto mix = signal::mix_at_snr(clean, noise, snr);
  const auto traces = net.probe_stages(mix.noisy, &clean);
  ensure_dir(out_dir);
  std::string csv = "stage,si_sdr_db,spectral_l1\n";
  for (const auto& t : traces) {
    csv += std::to_string(t.stage) + "," + fmt(*t.si_sdr_db) + "," + fmt(*t.spectral_l1) + "\n";
    char name[32];
    std::snprintf(name, sizeof(name), "stage_%02zu.pgm", t.stage);
    write_text(out_dir / name, spectrogram_pgm(signal::stft(t.waveform, net.config().stft)));
  }
  write_text(out_dir / "stages.csv", csv);
  return csv;
}

inline std::string cmd_complexity(const std::optional<fs::path>& config, const std::optional<std::string>& sweep) {
  if (config.has_value() == sweep.has_value()) {
    throw ConfigError("complexity: give exactly one of --config or --sweep");
  }
  if (config) {
    const auto j = read_json(*config);
    const auto cfg = j.contains("model") ? j.at("model").get<model::ModelConfig>() : j.get<model::ModelConfig>();
    return complexity::table_sweep({cfg});
  }
  std::vector<model::ModelConfig> configs;
  for (const auto& [b, r] : parse_grid(*sweep)) {
    model::ModelConfig cfg;
    cfg.blocks = b;
    cfg.repeats = r;
    configs.push_back(cfg);
  }
  return complexity::table_sweep(configs);
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  retain_heap();
  CLI::App app{"Block-reuse speech enhancement toolkit", "serb"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Synthesize clean/noise WAV pairs and a manifest");
  std::string spec_path, out_dir;
  synth->add_option("--spec", spec_path, "Synthesis spec JSON")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* trn = app.add_subcommand("train", "Train a model from an experiment config");
  std::string config_path, resume_path;
  std::uint64_t seed = 0;
  trn->add_option("--config", config_path, "Experiment config JSON")->required();
  auto* seed_opt = trn->add_option("--seed", seed, "Override train.seed");
  trn->add_option("--resume", resume_path, "Resume from a training checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  std::string ckpt_path, manifest_path, snr_list = "0";
  bool passthrough = false;
  eval->add_option("--ckpt", ckpt_path, "Model checkpoint");
  eval->add_option("--manifest", manifest_path, "Manifest CSV")->required();
  eval->add_option("--snr", snr_list, "Comma-separated mixture SNRs in dB");
  eval->add_flag("--passthrough", passthrough, "Score the noisy input itself (enhanced := noisy)");

  auto* probe = app.add_subcommand("probe", "Decode every processing stage of one mixture");
  std::vector<std::string> wavs;
  double probe_snr = 0.0;
  std::string probe_ckpt, probe_out = "probe";
  probe->add_option("--ckpt", probe_ckpt, "Model checkpoint")->required();
  probe->add_option("--wav", wavs, "Clean and noise WAV files")->required()->expected(2);
  probe->add_option("--snr", probe_snr, "Mixture SNR in dB");
  probe->add_option("--out", probe_out, "Output directory for stages.csv and PGM files");

  auto* cx = app.add_subcommand("complexity", "Parameter and MAC table");
  std::string cx_config, cx_sweep;
  auto* cx_config_opt = cx->add_option("--config", cx_config, "Model or experiment config JSON");
  auto* cx_sweep_opt = cx->add_option("--sweep", cx_sweep, "\"standard\" or a list such as 1x4,2x8");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*synth) {
      cmd_synth(spec_path, out_dir, out);
    } else if (*trn) {
      cmd_train(config_path, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt,
                resume_path.empty() ? std::nullopt : std::optional<fs::path>(resume_path), out);
    } else if (*eval) {
      out << cmd_eval(ckpt_path.empty() ? std::nullopt : std::optional<fs::path>(ckpt_path), manifest_path,
                      parse_number_list(snr_list, "SNR"), passthrough);
    } else if (*probe) {
      out << cmd_probe(probe_ckpt, wavs.at(0), wavs.at(1), probe_snr, probe_out);
    } else if (*cx) {
      out << cmd_complexity(*cx_config_opt ? std::optional<fs::path>(cx_config) : std::nullopt,
                            *cx_sweep_opt ? std::optional<std::string>(cx_sweep) : std::nullopt);
    }
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: invalid config: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}

}  // namespace serb::cli
