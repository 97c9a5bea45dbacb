#pragma once

// Binary checkpoint:
//   "CRT1" u8:version
//   u32:len config-text
//   u32:count, then per tensor: u32:len name, u32:rank, u64 extents[rank], f32 values (row-major)
//   optional "ADAM" block: for generator then discriminator,
//     u64:step f64:beta1 f64:beta2 f64:eps u32:count, per moment u64:n f32[n] (first) f32[n] (second)
// Integers and floats are little-endian.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>

#include "crt/adam.hpp"
#include "crt/error.hpp"
#include "crt/model.hpp"

namespace crt {

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct OptimizerStates {
  ad::AdamState<float> generator;
  ad::AdamState<float> discriminator;
};

struct Checkpoint {
  ModelConfig config;
  ParameterSet<float> params;
  std::optional<OptimizerStates> optimizer;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string what) : buf_(std::move(data)), what_(std::move(what)) {}

  bool at_end() const { return pos_ == buf_.size(); }
  std::string take(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() { return take(u32()); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw DataError(what_ + ": truncated checkpoint");
  }
  std::string buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline void write_adam(ByteWriter& w, const ad::AdamState<float>& s) {
  w.u64(s.step);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  w.u32(static_cast<std::uint32_t>(s.first_moment.size()));
  for (std::size_t i = 0; i < s.first_moment.size(); ++i) {
    w.u64(s.first_moment[i].size());
    for (float v : s.first_moment[i]) w.f32(v);
    for (float v : s.second_moment[i]) w.f32(v);
  }
}

inline ad::AdamState<float> read_adam(ByteReader& r) {
  ad::AdamState<float> s;
  s.step = r.u64();
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.eps = r.f64();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint64_t len = r.u64();
    std::vector<float> m(len), v(len);
    for (auto& x : m) x = r.f32();
    for (auto& x : v) x = r.f32();
    s.first_moment.push_back(std::move(m));
    s.second_moment.push_back(std::move(v));
  }
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes("CRT1", 4);
  w.u8(kCheckpointVersion);
  w.str(ck.config.serialize());
  w.u32(static_cast<std::uint32_t>(ck.params.tensors.size()));
  for (const auto& [name, t] : ck.params.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (float v : t.data()) w.f32(v);
  }
  if (ck.optimizer) {
    w.bytes("ADAM", 4);
    detail::write_adam(w, ck.optimizer->generator);
    detail::write_adam(w, ck.optimizer->discriminator);
  }
  return w.data();
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    const auto bytes = serialize_checkpoint(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Loads and validates a checkpoint: every parameter must match its config.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), {});
  detail::ByteReader r(std::move(data), path.string());
  if (r.take(4) != "CRT1") throw DataError(path.string() + ": not a checkpoint (bad magic)");
  if (const auto v = r.u8(); v != kCheckpointVersion) throw DataError(path.string() + ": unsupported version " + std::to_string(v));
  Checkpoint ck;
  try {
    ck.config = ModelConfig::parse(r.str());
    ck.config.validate();
  } catch (const UsageError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    ad::Shape shape(r.u32());
    for (auto& e : shape) e = r.u64();
    std::vector<float> v(ad::numel(shape));
    for (auto& x : v) x = r.f32();
    ck.params.tensors.emplace(std::move(name), ad::Tensor<float>(std::move(shape), std::move(v), true));
  }
  ck.params.check(ck.config);
  if (!r.at_end()) {
    if (r.take(4) != "ADAM") throw DataError(path.string() + ": unexpected trailing data");
    OptimizerStates s;
    s.generator = detail::read_adam(r);
    s.discriminator = detail::read_adam(r);
    ck.optimizer = std::move(s);
  }
  return ck;
}

}  // namespace crt
