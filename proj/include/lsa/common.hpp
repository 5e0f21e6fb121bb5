#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace lsa {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// 64-bit FNV-1a over raw bytes. Stable across platforms; used for shuffle
/// partitioning, manifest checksums and seeding.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

/// Deterministic counter-based RNG (splitmix64). The standard library
/// distributions are implementation-defined, so anything that must be
/// bit-reproducible across toolchains draws from this.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound). bound > 0.
  uint64_t below(uint64_t bound) { return next() % bound; }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller on the deterministic stream.
  double normal() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  uint64_t state_;
};

/// Little-endian binary writer over a stream. All pipeline file formats go
/// through this so layouts stay byte-deterministic.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void i32(int32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void bytes(std::string_view s) { raw(s.data(), s.size()); }
  void vec3(const Eigen::Vector3d& v) {
    f64(v.x());
    f64(v.y());
    f64(v.z());
  }

  void raw(const void* p, size_t n) { os_.write(static_cast<const char*>(p), std::streamsize(n)); }

 private:
  std::ostream& os_;
};

class TruncatedError : public std::runtime_error {
 public:
  explicit TruncatedError(const std::string& what) : std::runtime_error(what) {}
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  int32_t i32() {
    int32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  Eigen::Vector3d vec3() {
    double x = f64(), y = f64(), z = f64();
    return {x, y, z};
  }

  void raw(void* p, size_t n) {
    is_.read(static_cast<char*>(p), std::streamsize(n));
    if (static_cast<size_t>(is_.gcount()) != n) throw TruncatedError("unexpected end of file");
  }

  bool at_eof() {
    return is_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::istream& is_;
};

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + p.string());
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + p.string());
  return is;
}

inline std::string read_file(const std::filesystem::path& p) {
  auto is = open_in(p);
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_file_atomic(const std::filesystem::path& p, std::string_view content) {
  auto tmp = p;
  tmp += ".tmp";
  {
    auto os = open_out(tmp);
    os.write(content.data(), std::streamsize(content.size()));
  }
  std::filesystem::rename(tmp, p);
}

inline uint64_t file_checksum(const std::filesystem::path& p) {
  auto s = read_file(p);
  return fnv1a64(s);
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace lsa
