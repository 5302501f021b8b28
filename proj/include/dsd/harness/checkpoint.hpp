// Copyright 2026 The dsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "dsd/canonical_json.hpp"
#include "dsd/data/scene.hpp"
#include "dsd/model/model.hpp"
#include "dsd/model/prompts.hpp"

namespace dsd {

/// Binary checkpoint layout (all integers little-endian):
///
///   "DSD1"                      magic
///   u32                         format version
///   u32 count, {u32 len, bytes} vocabulary table
///   u64 len, bytes              config snapshot, canonical JSON
///   u64                         tensor count
///   per tensor:
///     u32 len, bytes            name (UTF-8)
///     u32                       rank
///     u64 x rank                extents
///     u8                        dtype tag (1 = f64)
///     f64 x prod(extents)       row-major payload
///   u32                         CRC-32 of every preceding byte
struct Checkpoint {
  std::vector<std::string> vocabulary;
  Json config = Json::object();
  ParamMap tensors;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'D', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str32(std::string_view s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (n > remaining()) {
      throw FormatError(std::string("checkpoint truncated reading ") + what + " at offset " +
                        std::to_string(pos_));
    }
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T le(const char* what) {
    auto b = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string str32(const char* what) {
    const auto n = le<std::uint32_t>(what);
    return std::string(take(n, what));
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view s) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint32_t>(ck.vocabulary.size()));
  for (const auto& tok : ck.vocabulary) w.str32(tok);
  const std::string cfg = canonical_json(ck.config);
  w.le(static_cast<std::uint64_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  w.le(static_cast<std::uint64_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.str32(name);
    w.le(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.le(static_cast<std::uint64_t>(e));
    w.le(kDtypeF64);
    for (double v : t.data()) w.f64(v);
  }
  w.le(detail::crc32_of(w.buffer()));
  return std::move(w.buffer());
}

inline Checkpoint decode_checkpoint(std::string_view data) {
  detail::ByteReader r(data);
  if (r.take(4, "magic") != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError("bad checkpoint magic at offset 0");
  }
  const std::size_t version_at = r.offset();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset " +
                      std::to_string(version_at));
  }
  Checkpoint ck;
  const auto vocab = r.le<std::uint32_t>("vocabulary size");
  for (std::uint32_t i = 0; i < vocab; ++i) ck.vocabulary.push_back(r.str32("vocabulary entry"));
  const std::size_t cfg_at = r.offset();
  const auto cfg_len = r.le<std::uint64_t>("config length");
  const auto cfg = r.take(cfg_len, "config");
  try {
    ck.config = Json::parse(cfg);
  } catch (const Json::exception& e) {
    throw FormatError("invalid config JSON at offset " + std::to_string(cfg_at) + ": " + e.what());
  }
  const auto count = r.le<std::uint64_t>("tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.str32("tensor name");
    const auto rank = r.le<std::uint32_t>("rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::size_t at = r.offset();
      const auto e = r.le<std::uint64_t>("extent");
      if (e == 0 || e > r.remaining()) {
        throw FormatError("invalid extent " + std::to_string(e) + " at offset " + std::to_string(at));
      }
      shape.push_back(static_cast<std::size_t>(e));
      n *= e;
    }
    const std::size_t dtype_at = r.offset();
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype != kDtypeF64) {
      throw FormatError("unknown dtype tag " + std::to_string(dtype) + " at offset " + std::to_string(dtype_at));
    }
    if (n > r.remaining() / 8) {
      throw FormatError("checkpoint truncated in payload of '" + name + "' at offset " +
                        std::to_string(r.offset()));
    }
    std::vector<double> values(static_cast<std::size_t>(n));
    for (double& v : values) v = r.f64("payload");
    ck.tensors.insert_or_assign(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const std::size_t crc_at = r.offset();
  const auto stored = r.le<std::uint32_t>("checksum");
  if (stored != detail::crc32_of(data.substr(0, crc_at))) {
    throw FormatError("checksum mismatch at offset " + std::to_string(crc_at));
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after checksum at offset " + std::to_string(r.offset()));
  }
  return ck;
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write to '" + path + "' failed");
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(is), {});
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Model and prompt sections
// ---------------------------------------------------------------------------

inline Checkpoint model_checkpoint(const Model& m, const Json& extra = Json::object()) {
  Checkpoint ck;
  ck.vocabulary = vocabulary();
  ck.config = Json{{"section", "model"}, {"model", m.config.to_json()}};
  if (!extra.empty()) ck.config["run"] = extra;
  ck.tensors = m.params;
  return ck;
}

/// Rebuilds a model from a "model" section. Tensors are not validated
/// here; validate_model reports the first missing or misshapen one.
inline Model model_from_checkpoint(const Checkpoint& ck) {
  if (ck.config.value("section", "") != "model") throw FormatError("checkpoint is not a model section");
  if (ck.vocabulary != vocabulary()) throw FormatError("checkpoint vocabulary differs from the built-in table");
  Model m;
  m.config = ModelConfig::from_json(ck.config.at("model"));
  m.params = ck.tensors;
  return m;
}

inline void save_model(const Model& m, const std::string& path, const Json& extra = Json::object()) {
  save_checkpoint(model_checkpoint(m, extra), path);
}

inline Model load_model(const std::string& path) { return model_from_checkpoint(load_checkpoint(path)); }

inline void save_prompts(const PromptParams& p, const ModelConfig& c, const std::string& path,
                         const Json& extra = Json::object()) {
  Checkpoint ck;
  ck.vocabulary = vocabulary();
  ck.config = Json{{"section", "prompts"}, {"model", c.to_json()}};
  if (!extra.empty()) ck.config["run"] = extra;
  ck.tensors = p.params;
  save_checkpoint(ck, path);
}

inline PromptParams load_prompts(const std::string& path, const ModelConfig& c) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config.value("section", "") != "prompts") throw FormatError("'" + path + "' is not a prompt checkpoint");
  PromptParams p{std::move(ck.tensors)};
  validate_prompts(p, c);
  return p;
}

}  // namespace dsd
