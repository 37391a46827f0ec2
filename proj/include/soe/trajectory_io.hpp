#pragma once

// Binary file formats.
//
// Trajectory (.soet), all integers little-endian:
//   0   char[4]  "SOET"
//   4   u32      version (1)
//   8   u32      T
//   12  u32      d
//   16  u32      layer_tag
//   20  u32      flags: bit0 tokens, bit1 correctness, bit2 token_count
//   24  f32[T·d] states, row-major
//   then, when flagged and in this order:
//       T × (u32 byte length, UTF-8 bytes)   token block
//       u8                                   correctness (0 or 1)
//       u64                                  token_count
//
// Bias manifold sidecar (.soem):
//   "SOEM", u32 version (1), u32 d, u32 k, u32 N, f64 energy_fraction,
//   f64[d] mean, f64[k] eigenvalues, f64[d·k] basis row-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "soe/error.hpp"
#include "soe/manifold.hpp"
#include "soe/spectral_monitor.hpp"

namespace soe {

inline constexpr std::uint32_t kTrajectoryVersion = 1;
inline constexpr std::uint32_t kManifoldVersion = 1;
inline constexpr std::size_t kTrajectoryHeaderBytes = 24;

enum TrajectoryFlags : std::uint32_t {
  kHasTokens = 1u << 0,
  kHasCorrectness = 1u << 1,
  kHasTokenCount = 1u << 2,
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<unsigned char> take() { return std::move(buf_); }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> data) : data_(data) {}

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(ErrorCode::FormatError, std::string("truncated file while reading ") + what);
  }
  std::span<const unsigned char> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return bytes(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto b = bytes(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = bytes(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

 private:
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::IoError, "read failed for '" + path.string() + "'");
  return data;
}

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  require(v <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::InvalidInput, std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

/// States are stored as 32-bit floats; values not representable in float are rounded.
inline std::vector<unsigned char> encode_trajectory(const StateTrajectory& traj) {
  traj.validate();
  detail::ByteWriter w;
  w.bytes("SOET", 4);
  w.u32(kTrajectoryVersion);
  w.u32(detail::checked_u32(traj.length(), "T"));
  w.u32(detail::checked_u32(traj.dim(), "d"));
  w.u32(traj.layer_tag);
  std::uint32_t flags = 0;
  if (!traj.token_texts.empty()) flags |= kHasTokens;
  if (traj.correct.has_value()) flags |= kHasCorrectness;
  if (traj.token_count != 0) flags |= kHasTokenCount;
  w.u32(flags);
  for (double x : traj.states.data()) w.f32(static_cast<float>(x));
  if (flags & kHasTokens)
    for (const auto& tok : traj.token_texts) {
      w.u32(detail::checked_u32(tok.size(), "token length"));
      w.bytes(tok.data(), tok.size());
    }
  if (flags & kHasCorrectness) w.u8(*traj.correct ? 1 : 0);
  if (flags & kHasTokenCount) w.u64(traj.token_count);
  return w.take();
}

inline StateTrajectory decode_trajectory(std::span<const unsigned char> data) {
  detail::ByteReader r(data);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), "SOET", 4) != 0) fail(ErrorCode::FormatError, "bad magic, not a trajectory file");
  const std::uint32_t version = r.u32("version");
  if (version != kTrajectoryVersion)
    fail(ErrorCode::UnsupportedVersion, "trajectory version " + std::to_string(version) + " is not supported");
  const std::uint32_t t = r.u32("T");
  const std::uint32_t d = r.u32("d");
  StateTrajectory traj;
  traj.layer_tag = r.u32("layer_tag");
  const std::uint32_t flags = r.u32("flags");
  if (flags & ~(kHasTokens | kHasCorrectness | kHasTokenCount))
    fail(ErrorCode::FormatError, "unknown flag bits set");
  if (t == 0 || d == 0) fail(ErrorCode::FormatError, "empty trajectory (T or d is zero)");

  if (static_cast<std::uint64_t>(t) * d > r.remaining() / 4) fail(ErrorCode::FormatError, "truncated payload");
  traj.states = Matrix(t, d);
  for (double& x : traj.states.data()) x = static_cast<double>(r.f32("payload"));

  if (flags & kHasTokens) {
    traj.token_texts.reserve(t);
    for (std::uint32_t i = 0; i < t; ++i) {
      const std::uint32_t len = r.u32("token length");
      const auto b = r.bytes(len, "token text");
      traj.token_texts.emplace_back(reinterpret_cast<const char*>(b.data()), b.size());
    }
  }
  if (flags & kHasCorrectness) {
    const std::uint8_t c = r.u8("correctness");
    if (c > 1) fail(ErrorCode::FormatError, "correctness byte must be 0 or 1");
    traj.correct = c == 1;
  }
  if (flags & kHasTokenCount) {
    traj.token_count = r.u64("token_count");
    if (traj.token_count == 0) fail(ErrorCode::FormatError, "token_count flag set with zero value");
  }
  if (r.remaining() != 0) fail(ErrorCode::FormatError, "trailing bytes after trajectory");
  if (!traj.states.all_finite()) fail(ErrorCode::FormatError, "non-finite state value");
  return traj;
}

inline void write_trajectory(const StateTrajectory& traj, const std::filesystem::path& path) {
  detail::write_file(path, encode_trajectory(traj));
}

inline StateTrajectory read_trajectory(const std::filesystem::path& path) {
  return decode_trajectory(detail::read_file(path));
}

inline std::vector<unsigned char> encode_manifold(const BiasManifold& m) {
  require(m.basis.rows() == m.dim() && m.basis.cols() == m.eigenvalues.size(), ErrorCode::InvalidInput,
          "manifold shape is inconsistent");
  detail::ByteWriter w;
  w.bytes("SOEM", 4);
  w.u32(kManifoldVersion);
  w.u32(detail::checked_u32(m.dim(), "d"));
  w.u32(detail::checked_u32(m.rank(), "k"));
  w.u32(detail::checked_u32(m.sample_count, "N"));
  w.f64(m.energy_fraction);
  for (double x : m.mean) w.f64(x);
  for (double x : m.eigenvalues) w.f64(x);
  for (double x : m.basis.data()) w.f64(x);
  return w.take();
}

inline BiasManifold decode_manifold(std::span<const unsigned char> data) {
  detail::ByteReader r(data);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), "SOEM", 4) != 0) fail(ErrorCode::FormatError, "bad magic, not a manifold file");
  const std::uint32_t version = r.u32("version");
  if (version != kManifoldVersion)
    fail(ErrorCode::UnsupportedVersion, "manifold version " + std::to_string(version) + " is not supported");
  const std::uint32_t d = r.u32("d");
  const std::uint32_t k = r.u32("k");
  BiasManifold m;
  m.sample_count = r.u32("N");
  m.energy_fraction = r.f64("energy_fraction");
  if (d == 0) fail(ErrorCode::FormatError, "manifold dimension is zero");
  if (r.remaining() != 8ull * (d + k + static_cast<std::uint64_t>(d) * k))
    fail(ErrorCode::FormatError, "manifold payload size mismatch");
  m.mean.resize(d);
  for (double& x : m.mean) x = r.f64("mean");
  m.eigenvalues.resize(k);
  for (double& x : m.eigenvalues) x = r.f64("eigenvalues");
  m.basis = Matrix(d, k);
  for (double& x : m.basis.data()) x = r.f64("basis");
  return m;
}

inline void write_manifold(const BiasManifold& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_manifold(m));
}

inline BiasManifold read_manifold(const std::filesystem::path& path) {
  return decode_manifold(detail::read_file(path));
}

}  // namespace soe
