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

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "serb/error.hpp"
#include "serb/model/network.hpp"

namespace serb::model {

inline constexpr char kCheckpointMagic[4] = {'S', 'E', 'R', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raw contents of a checkpoint file.
///
/// Layout (little-endian): "SERB", u32 version, u64 JSON length, JSON bytes,
/// then per tensor: u32 name length, UTF-8 name, u32 rank, u64 dims[rank],
/// float32 payload. The JSON block holds the ModelConfig fields plus
/// "tensor_count" and, for training snapshots, "train_state".
struct CheckpointFile {
  struct Record {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;
  };
  nlohmann::json header;
  std::vector<Record> records;

  const Record* find(const std::string& name) const {
    for (const auto& r : records) {
      if (r.name == name) return &r;
    }
    return nullptr;
  }
};

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError(origin_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointFile& file) {
  static_assert(sizeof(float) == 4);
  std::string out(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  auto header = file.header;
  header["tensor_count"] = file.records.size();
  const std::string json = header.dump();
  detail::put<std::uint64_t>(out, json.size());
  out += json;
  for (const auto& r : file.records) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) detail::put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(r.data.data()), r.data.size() * sizeof(float));
  }
  return out;
}

inline CheckpointFile decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw IoError(origin + ": bad checkpoint magic");
  }
  detail::Reader in(bytes, origin);
  in.take(4);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile file;
  const auto json_len = in.get<std::uint64_t>();
  try {
    file.header = nlohmann::json::parse(in.take(json_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(origin + ": corrupt checkpoint header: " + e.what());
  }
  const auto count = file.header.value("tensor_count", std::uint64_t{0});
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointFile::Record r;
    r.name = in.take(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      r.dims.push_back(in.get<std::uint64_t>());
      n *= r.dims.back();
    }
    const std::string payload = in.take(n * sizeof(float));
    r.data.resize(n);
    std::memcpy(r.data.data(), payload.data(), payload.size());
    file.records.push_back(std::move(r));
  }
  if (!in.done()) throw IoError(origin + ": trailing bytes after last tensor");
  return file;
}

inline void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  const std::string bytes = encode_checkpoint(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

template <class Real>
CheckpointFile::Record to_record(const std::string& name, const ad::Shape& shape, std::span<const Real> values) {
  CheckpointFile::Record r;
  r.name = name;
  r.dims.assign(shape.begin(), shape.end());
  r.data.assign(values.begin(), values.end());
  return r;
}

/// Model parameters plus config header.
template <class Real>
CheckpointFile snapshot(const EnhancementModel<Real>& model) {
  CheckpointFile file;
  file.header = model.config();
  for (const auto& p : model.parameters()) {
    file.records.push_back(to_record<Real>(p.name(), p.shape(), p.values()));
  }
  return file;
}

/// Copies checkpoint tensors into an existing model; every model tensor must
/// be present with the same shape. Records under "adamw." are ignored.
template <class Real>
void load_parameters(EnhancementModel<Real>& model, const CheckpointFile& file) {
  std::size_t model_records = 0;
  for (const auto& r : file.records) {
    if (r.name.rfind("adamw.", 0) != 0) ++model_records;
  }
  for (auto& p : model.parameters()) {
    const auto* r = file.find(p.name());
    if (!r) throw ShapeError("checkpoint shape disagreement: missing tensor " + p.name());
    const ad::Shape dims(r->dims.begin(), r->dims.end());
    if (dims != p.shape()) {
      throw ShapeError("checkpoint shape disagreement for " + p.name() + ": file " + ad::to_string(dims) +
                       ", model " + ad::to_string(p.shape()));
    }
    std::copy(r->data.begin(), r->data.end(), p.mutable_values().begin());
  }
  if (model_records != model.parameters().size()) {
    throw ShapeError("checkpoint shape disagreement: file has " + std::to_string(model_records) +
                     " tensors, model expects " + std::to_string(model.parameters().size()));
  }
}

template <class Real>
void save_checkpoint(const EnhancementModel<Real>& model, const std::filesystem::path& path) {
  write_checkpoint_file(path, snapshot(model));
}

template <class Real = float>
EnhancementModel<Real> load_checkpoint(const std::filesystem::path& path) {
  const auto file = read_checkpoint_file(path);
  ModelConfig cfg;
  try {
    cfg = file.header.get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": invalid config block: " + e.what());
  }
  EnhancementModel<Real> model(cfg);
  load_parameters(model, file);
  return model;
}

/// Loads a checkpoint into a model built from `requested`; fails with a
/// shape-disagreement error when the stored tensors do not fit.
template <class Real = float>
EnhancementModel<Real> load_checkpoint(const std::filesystem::path& path, const ModelConfig& requested) {
  EnhancementModel<Real> model(requested);
  load_parameters(model, read_checkpoint_file(path));
  return model;
}

}  // namespace serb::model
