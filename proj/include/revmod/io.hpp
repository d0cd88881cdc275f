#pragma once

// On-disk formats. Everything is little-endian and versioned.
//
//   WAV         mono PCM16 or IEEE float32
//   RIR file    "RIR1" | u32 version | u32 sample_rate | u32 L | L x f64
//   checkpoint  "RVCK" | u32 version | u32 n + config JSON | u32 groups |
//               groups x (u32 n + name | u32 ndim | ndim x u32 | f64 data) | u32 CRC32

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "revmod/core.hpp"
#include "revmod/rir.hpp"

namespace revmod {

namespace detail {

class ByteWriter {
 public:
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  const std::string& data() const { return buf_; }
  std::string& data() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::string_view take(std::size_t n) {
    if (remaining() < n) throw FormatError(what_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                                           std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { take(n); }

  std::uint64_t uint(int bytes) {
    auto s = take(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(uint(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string str() {
    const auto n = u32();
    return std::string(take(n));
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// WAV

enum class WavEncoding { pcm16, float32 };

inline std::string encode_wav(const Waveform& w, WavEncoding enc) {
  w.validate();
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t format = enc == WavEncoding::pcm16 ? 1 : 3;
  const auto n = static_cast<std::uint32_t>(w.size());
  const std::uint32_t data_bytes = n * (bits / 8);
  detail::ByteWriter b;
  b.bytes("RIFF");
  b.u32(36 + data_bytes);
  b.bytes("WAVE");
  b.bytes("fmt ");
  b.u32(16);
  b.u16(format);
  b.u16(1);
  b.u32(static_cast<std::uint32_t>(w.sample_rate));
  b.u32(static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
  b.u16(bits / 8);
  b.u16(bits);
  b.bytes("data");
  b.u32(data_bytes);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);  // hard clip
    if (enc == WavEncoding::pcm16)
      b.i16(static_cast<std::int16_t>(std::lround(c * 32767.0)));
    else
      b.f32(static_cast<float>(c));
  }
  return b.data();
}

inline Waveform decode_wav(std::string_view bytes, const std::string& what = "wav") {
  detail::ByteReader r(bytes, what);
  if (r.take(4) != "RIFF") throw FormatError(what + ": missing RIFF header");
  r.u32();
  if (r.take(4) != "WAVE") throw FormatError(what + ": not a WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t fs = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id(r.take(4));
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) throw FormatError(what + ": fmt chunk too small");
      detail::ByteReader f(r.take(size), what);
      format = f.u16();
      channels = f.u16();
      fs = f.u32();
      f.u32();
      f.u16();
      bits = f.u16();
      if (format == 0xFFFE && size >= 40) {  // WAVE_FORMAT_EXTENSIBLE: subformat GUID starts with the tag
        f.u16();
        f.u16();
        f.u32();
        format = f.u16();
      }
      have_fmt = true;
      if (size % 2) r.skip(std::min<std::size_t>(1, r.remaining()));
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(what + ": data chunk before fmt chunk");
      if (channels != 1)
        throw FormatError(what + ": unsupported channel count " + std::to_string(channels) + " (mono only)");
      const bool pcm16 = format == 1 && bits == 16;
      const bool flt32 = format == 3 && bits == 32;
      if (!pcm16 && !flt32)
        throw FormatError(what + ": unsupported encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits); PCM16 and float32 are supported");
      const std::size_t width = bits / 8;
      if (size % width) throw FormatError(what + ": data size is not a multiple of the sample width");
      detail::ByteReader d(r.take(size), what);
      Waveform w({}, static_cast<int>(fs));
      w.samples.resize(size / width);
      for (auto& s : w.samples) s = pcm16 ? d.i16() / 32767.0 : static_cast<double>(d.f32());
      if (w.sample_rate <= 0) throw FormatError(what + ": invalid sample rate");
      return w;
    } else {
      r.skip(std::min<std::size_t>(size + (size % 2), r.remaining()));
    }
  }
  throw FormatError(what + ": no data chunk");
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding enc = WavEncoding::float32) {
  detail::write_file(path, encode_wav(w, enc));
}

inline Waveform read_wav(const std::filesystem::path& path) {
  return decode_wav(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// RIR files

inline constexpr std::uint32_t kRirFileVersion = 1;

inline std::string encode_rir(const Rir& h) {
  detail::ByteWriter b;
  b.bytes("RIR1");
  b.u32(kRirFileVersion);
  b.u32(static_cast<std::uint32_t>(h.sample_rate()));
  b.u32(static_cast<std::uint32_t>(h.length()));
  for (double c : h.coefficients()) b.f64(c);
  return b.data();
}

inline Rir decode_rir(std::string_view bytes, const std::string& what = "rir") {
  detail::ByteReader r(bytes, what);
  if (r.take(4) != "RIR1") throw FormatError(what + ": bad magic (expected RIR1)");
  const auto version = r.u32();
  if (version != kRirFileVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const auto fs = r.u32();
  const auto len = r.u32();
  if (len == 0) throw FormatError(what + ": zero-length RIR");
  if (r.remaining() != static_cast<std::size_t>(len) * 8)
    throw FormatError(what + ": truncated or oversized payload (header declares " + std::to_string(len) +
                      " coefficients, payload holds " + std::to_string(r.remaining()) + " bytes)");
  std::vector<double> h(len);
  for (auto& c : h) c = r.f64();
  if (h[0] != 1.0)
    throw FormatError(what + ": direct-path constraint violated: stored h1 = " + std::to_string(h[0]) +
                      ", must be exactly 1.0");
  if (fs == 0) throw FormatError(what + ": invalid sample rate");
  return Rir::from_coefficients(h, static_cast<int>(fs));
}

inline void write_rir(const std::filesystem::path& path, const Rir& h) { detail::write_file(path, encode_rir(h)); }
inline Rir read_rir(const std::filesystem::path& path) { return decode_rir(detail::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointGroup {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<CheckpointGroup> groups;

  const CheckpointGroup* find(std::string_view name) const {
    for (const auto& g : groups)
      if (g.name == name) return &g;
    return nullptr;
  }

  void add(std::string name, const Tensor& t) { groups.push_back({std::move(name), t.shape, t.data}); }
  void add(std::string name, std::span<const double> v) {
    groups.push_back({std::move(name), {v.size()}, std::vector<double>(v.begin(), v.end())});
  }

  /// Copies a stored group into `t`, which must already have the expected shape.
  void restore(std::string_view name, Tensor& t) const {
    const auto* g = find(name);
    if (!g) throw ShapeError("checkpoint: missing parameter group '" + std::string(name) + "'");
    if (g->shape != t.shape) {
      auto fmt = [](const std::vector<std::size_t>& s) {
        std::string o = "[";
        for (std::size_t i = 0; i < s.size(); ++i) o += (i ? "x" : "") + std::to_string(s[i]);
        return o + "]";
      };
      throw ShapeError("checkpoint: shape mismatch for group '" + std::string(name) + "': stored " + fmt(g->shape) +
                       ", expected " + fmt(t.shape));
    }
    t.data = g->data;
  }

  void restore(std::string_view name, std::vector<double>& v) const {
    Tensor t({v.size()});
    restore(name, t);
    v = std::move(t.data);
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter b;
  b.bytes("RVCK");
  b.u32(kCheckpointVersion);
  b.str(ck.config.dump());
  b.u32(static_cast<std::uint32_t>(ck.groups.size()));
  for (const auto& g : ck.groups) {
    std::size_t n = 1;
    for (auto d : g.shape) n *= d;
    require_dims(n == g.data.size(), "checkpoint: group '" + g.name + "' shape does not match its data");
    b.str(g.name);
    b.u32(static_cast<std::uint32_t>(g.shape.size()));
    for (auto d : g.shape) b.u32(static_cast<std::uint32_t>(d));
    for (double v : g.data) b.f64(v);
  }
  const auto crc = detail::crc32_of(b.data());
  b.u32(crc);
  return b.data();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  if (bytes.size() < 8) throw FormatError(what + ": truncated");
  const auto payload = bytes.substr(0, bytes.size() - 4);
  detail::ByteReader tail(bytes.substr(bytes.size() - 4), what);
  if (tail.u32() != detail::crc32_of(payload)) throw ChecksumError(what + ": CRC32 mismatch, file is corrupted");
  detail::ByteReader r(payload, what);
  if (r.take(4) != "RVCK") throw FormatError(what + ": bad magic (expected RVCK)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed config block: " + e.what());
  }
  const auto ng = r.u32();
  for (std::uint32_t i = 0; i < ng; ++i) {
    CheckpointGroup g;
    g.name = r.str();
    const auto nd = r.u32();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      g.shape.push_back(r.u32());
      n *= g.shape.back();
    }
    if (r.remaining() < n * 8) throw FormatError(what + ": truncated data for group '" + g.name + "'");
    g.data.resize(n);
    for (auto& v : g.data) v = r.f64();
    ck.groups.push_back(std::move(g));
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after the last group");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  detail::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace revmod
