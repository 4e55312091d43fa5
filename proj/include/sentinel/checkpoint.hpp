#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sentinel/hash.hpp"
#include "sentinel/model.hpp"

namespace sentinel {

/// Binary checkpoint layout (all integers little-endian):
///
///   "SRCK"  u32 version
///   u32 vocab  u32 context  u32 layers  u32 heads  u32 width  u32 ff
///   u8 positional  u64 seed  i32 sentinel_id  u32 lora_rank  f64 lora_alpha
///   u64 config_hash  u32 tensor_count
///   per tensor: u32 name_len, name bytes, u32 rows, u32 cols, f32 data (row-major)
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian byte buffer writer/reader shared by the checkpoint code.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64();
  float f32();
  double f64();
  std::string raw(std::size_t n);
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

template <typename Scalar>
std::vector<std::uint8_t> encode_checkpoint(const Model<Scalar>& model, std::uint64_t config_hash) {
  const auto& c = model.config;
  ByteWriter w;
  w.raw("SRCK");
  w.u32(kCheckpointVersion);
  for (Index v : {c.vocab_size, c.context, c.layers, c.heads, c.width, c.ff})
    w.u32(static_cast<std::uint32_t>(v));
  w.u8(static_cast<std::uint8_t>(c.positional));
  w.u64(c.seed);
  w.i32(model.sentinel_id);
  w.u32(static_cast<std::uint32_t>(model.lora_rank));
  w.f64(model.lora_alpha);
  w.u64(config_hash);

  std::uint32_t count = 0;
  visit_tensors([&](const std::string&, const Mat<Scalar>&) { ++count; }, model.weights);
  w.u32(count);
  visit_tensors(
      [&](const std::string& name, const Mat<Scalar>& t) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.u32(static_cast<std::uint32_t>(t.rows()));
        w.u32(static_cast<std::uint32_t>(t.cols()));
        for (Index r = 0; r < t.rows(); ++r)
          for (Index col = 0; col < t.cols(); ++col) w.f32(static_cast<float>(t(r, col)));
      },
      model.weights);
  return w.bytes();
}

template <typename Scalar>
Model<Scalar> decode_checkpoint(std::vector<std::uint8_t> bytes, std::uint64_t* config_hash = nullptr) {
  ByteReader r(std::move(bytes));
  if (r.raw(4) != "SRCK") throw std::runtime_error("not a checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  ModelConfig c;
  c.vocab_size = r.u32();
  c.context = r.u32();
  c.layers = r.u32();
  c.heads = r.u32();
  c.width = r.u32();
  c.ff = r.u32();
  const auto mode = r.u8();
  if (mode > 1) throw std::runtime_error("unknown positional mode in checkpoint");
  c.positional = static_cast<PositionalMode>(mode);
  c.seed = r.u64();
  const TokenId sentinel_id = r.i32();
  const Index rank = r.u32();
  const double alpha = r.f64();
  const std::uint64_t hash = r.u64();
  if (config_hash) *config_hash = hash;

  auto model = Model<Scalar>::init(c, sentinel_id);
  if (rank > 0) model.attach_lora(rank, alpha, 0);

  std::uint32_t expected = 0;
  visit_tensors([&](const std::string&, const Mat<Scalar>&) { ++expected; }, model.weights);
  if (r.u32() != expected) throw std::runtime_error("checkpoint tensor count mismatch");
  visit_tensors(
      [&](const std::string& name, Mat<Scalar>& t) {
        const auto len = r.u32();
        const std::string got = r.raw(len);
        if (got != name) throw std::runtime_error("checkpoint tensor '" + got + "', expected '" + name + "'");
        const Index rows = r.u32(), cols = r.u32();
        if (rows != t.rows() || cols != t.cols())
          throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong shape");
        for (Index i = 0; i < rows; ++i)
          for (Index j = 0; j < cols; ++j) t(i, j) = static_cast<Scalar>(r.f32());
      },
      model.weights);
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint tensors");
  return model;
}

template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, std::uint64_t config_hash,
                     const std::filesystem::path& path) {
  write_bytes(path, encode_checkpoint(model, config_hash));
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr) {
  return decode_checkpoint<Scalar>(read_bytes(path), config_hash);
}

/// FNV-1a over the raw scalar bytes of the given tensor (optionally skipping one row).
template <typename Scalar>
std::uint64_t tensor_checksum(const Mat<Scalar>& t, Index skip_row = -1,
                              std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (Index r = 0; r < t.rows(); ++r) {
    if (r == skip_row) continue;
    for (Index c = 0; c < t.cols(); ++c) {
      const Scalar v = t(r, c);
      h = fnv1a(&v, sizeof v, h);
    }
  }
  return h;
}

/// Checksum over every tensor (or tensor row) that is frozen in `model`.
template <typename Scalar>
std::uint64_t frozen_checksum(Model<Scalar>& model) {
  auto grads = zeros_like(model.weights);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.parameters(grads)) {
    if (!p.trainable) h = tensor_checksum(*p.value, -1, h);
    else if (p.only_row >= 0) h = tensor_checksum(*p.value, p.only_row, h);
  }
  return h;
}

template <typename Scalar>
std::uint64_t model_checksum(const Model<Scalar>& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  visit_tensors([&](const std::string&, const Mat<Scalar>& t) { h = tensor_checksum(t, -1, h); },
                model.weights);
  return h;
}

}  // namespace sentinel
