// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "i2c2w/model.hpp"

namespace i2c2w {

// On-disk format: "I2C2W" + format version byte, payload, crc32(payload).
// Parameter blobs are stored as doubles regardless of the in-memory scalar,
// so both float and double models round-trip exactly.
inline constexpr char kCheckpointMagic[5] = {'I', '2', 'C', '2', 'W'};
inline constexpr char kCheckpointVersion = '1';

struct Checkpoint {
  ModelConfig model;
  nlohmann::json extra;  // trainer configuration echo
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, MatX<double>>> blobs;
};

inline void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"model_dim", cfg.model_dim},
                     {"num_heads", cfg.num_heads},
                     {"num_slots", cfg.num_slots},
                     {"ffn_dim", cfg.ffn_dim},
                     {"encoder_layers", cfg.encoder_layers},
                     {"i2c_decoder_layers", cfg.i2c_decoder_layers},
                     {"c2w_decoder_layers", cfg.c2w_decoder_layers},
                     {"dropout", cfg.dropout},
                     {"use_positional_encoding", cfg.use_positional_encoding},
                     {"backbone", cfg.effective_backbone().stages}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  j.at("model_dim").get_to(cfg.model_dim);
  j.at("num_heads").get_to(cfg.num_heads);
  j.at("num_slots").get_to(cfg.num_slots);
  j.at("ffn_dim").get_to(cfg.ffn_dim);
  j.at("encoder_layers").get_to(cfg.encoder_layers);
  j.at("i2c_decoder_layers").get_to(cfg.i2c_decoder_layers);
  j.at("c2w_decoder_layers").get_to(cfg.c2w_decoder_layers);
  j.at("dropout").get_to(cfg.dropout);
  j.at("use_positional_encoding").get_to(cfg.use_positional_encoding);
  j.at("backbone").get_to(cfg.backbone.stages);
}

namespace ckpt_detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void doubles(double* dst, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(dst, data_ + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw CorruptBlob("payload truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ckpt,
                            const std::filesystem::path& path) {
  using namespace ckpt_detail;
  nlohmann::json header;
  header["model"] = ckpt.model;
  header["extra"] = ckpt.extra;
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> payload;
  put_u32(payload, static_cast<std::uint32_t>(header_text.size()));
  put_bytes(payload, header_text.data(), header_text.size());
  put_u64(payload, ckpt.step);
  put_u32(payload, static_cast<std::uint32_t>(ckpt.rng_state.size()));
  put_bytes(payload, ckpt.rng_state.data(), ckpt.rng_state.size());
  put_u32(payload, static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, mat] : ckpt.blobs) {
    put_u32(payload, static_cast<std::uint32_t>(name.size()));
    put_bytes(payload, name.data(), name.size());
    put_u32(payload, static_cast<std::uint32_t>(mat.rows()));
    put_u32(payload, static_cast<std::uint32_t>(mat.cols()));
    put_bytes(payload, mat.data(), sizeof(double) * mat.size());
  }

  std::vector<std::uint8_t> file;
  put_bytes(file, kCheckpointMagic, sizeof(kCheckpointMagic));
  file.push_back(static_cast<std::uint8_t>(kCheckpointVersion));
  put_bytes(file, payload.data(), payload.size());
  const uLong crc = crc32(0L, payload.data(), static_cast<uInt>(payload.size()));
  put_u32(file, static_cast<std::uint32_t>(crc));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IOFailure("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(file.data()),
           static_cast<std::streamsize>(file.size()));
  if (!os) throw IOFailure("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOFailure("cannot open " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (file.size() < sizeof(kCheckpointMagic) + 1 + 4)
    throw CorruptBlob("file too short");
  if (std::memcmp(file.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw BadMagic(path.string() + " is not a checkpoint");
  if (file[sizeof(kCheckpointMagic)] != static_cast<std::uint8_t>(kCheckpointVersion))
    throw VersionMismatch("unsupported checkpoint format version");

  const std::size_t payload_begin = sizeof(kCheckpointMagic) + 1;
  const std::size_t payload_size = file.size() - payload_begin - 4;
  const std::uint8_t* payload = file.data() + payload_begin;
  const uLong crc = crc32(0L, payload, static_cast<uInt>(payload_size));
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(file[payload_begin + payload_size + i])
              << (8 * i);
  if (static_cast<std::uint32_t>(crc) != stored)
    throw CorruptBlob("checksum mismatch");

  Reader r(payload, payload_size);
  Checkpoint ckpt;
  const std::uint32_t header_len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(header_len));
    ckpt.model = header.at("model").get<ModelConfig>();
    ckpt.extra = header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptBlob(std::string("bad header: ") + e.what());
  }
  ckpt.step = r.u64();
  ckpt.rng_state = r.str(r.u32());
  const std::uint32_t blob_count = r.u32();
  ckpt.blobs.reserve(blob_count);
  for (std::uint32_t i = 0; i < blob_count; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    MatX<double> mat(rows, cols);
    r.doubles(mat.data(), static_cast<std::size_t>(rows) * cols);
    ckpt.blobs.emplace_back(name, std::move(mat));
  }
  return ckpt;
}

// Loader with a configuration guard: the echo must agree with what the
// caller expects (slot count and core dimensions).
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.model.num_slots != expected.num_slots)
    throw VersionMismatch(
        "checkpoint was trained with num_slots=" +
        std::to_string(ckpt.model.num_slots) + ", expected " +
        std::to_string(expected.num_slots));
  if (ckpt.model.model_dim != expected.model_dim ||
      ckpt.model.num_heads != expected.num_heads)
    throw VersionMismatch("checkpoint model dimensions disagree");
  return ckpt;
}

template <typename S>
Checkpoint snapshot(const Recognizer<S>& model, std::uint64_t step,
                    const std::string& rng_state,
                    nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint ckpt;
  ckpt.model = model.cfg;
  ckpt.extra = std::move(extra);
  ckpt.step = step;
  ckpt.rng_state = rng_state;
  ckpt.blobs.reserve(model.params.items.size());
  for (const auto& [name, var] : model.params.items)
    ckpt.blobs.emplace_back(name, var->value.template cast<double>());
  return ckpt;
}

template <typename S>
void restore(Recognizer<S>& model, const Checkpoint& ckpt) {
  if (ckpt.blobs.size() != model.params.items.size())
    throw CorruptBlob("parameter count mismatch");
  for (const auto& [name, mat] : ckpt.blobs) {
    const Var<S>& var = model.params.find(name);
    if (var->value.rows() != mat.rows() || var->value.cols() != mat.cols())
      throw CorruptBlob("parameter shape mismatch for " + name);
    var->value = mat.template cast<S>();
  }
}

template <typename S>
Recognizer<S> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = Recognizer<S>::init(ckpt.model, 0);
  restore(model, ckpt);
  return model;
}

}  // namespace i2c2w
