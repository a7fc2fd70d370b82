#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace scrawl {

// Error taxonomy, mapped to process exit codes by the CLI:
//   config_error        bad flags, malformed input data, inconsistent settings (exit 2)
//   io_error            filesystem trouble: missing files, short reads, bad checksums (exit 3)
//   numeric_error       non-finite values where finite math is required (exit 4)
//   spec_mismatch_error checkpoint was produced for a different model spec (exit 5)
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct spec_mismatch_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// Everything that consumes randomness goes through Rng so that runs are
// reproducible bit for bit across platforms and standard library versions.
// The std::* distributions are implementation-defined, which is why the
// mappings below are spelled out by hand. Generator: xoshiro256**, seeded
// through splitmix64.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives independent stream seeds from a base seed, e.g. one per epoch.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t s = base ^ (0x9e3779b97f4a7c15ull + (salt << 1));
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b >> 7) ^ (salt * 0x2545f4914f6cdd1dull);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt1, std::uint64_t salt2) {
  return mix_seed(mix_seed(base, salt1), salt2);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 significant bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1], keeps log() finite
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform in [0, n). Modulo bias is ~2^-64 per draw; determinism is what
  // matters here, not statistical perfection.
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Fisher-Yates, backwards, one call to below() per slot.
  template <typename Vec>
  void shuffle(Vec& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      using std::swap;
      swap(v[i], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Label space: 52 Latin letter classes, lowercase first.
//   'a'..'z' -> 0..25, 'A'..'Z' -> 26..51

struct LabelMap {
  static constexpr std::size_t kClassCount = 52;

  static bool valid(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

  static int index_of(char c) {
    if (c >= 'a' && c <= 'z') return c - 'a';
    if (c >= 'A' && c <= 'Z') return 26 + (c - 'A');
    throw config_error(std::string("label out of range: '") + c + "'");
  }

  static char label_at(int index) {
    if (index < 0 || index >= static_cast<int>(kClassCount))
      throw config_error("label index out of range: " + std::to_string(index));
    return index < 26 ? static_cast<char>('a' + index) : static_cast<char>('A' + index - 26);
  }

  static std::array<char, kClassCount> labels() {
    std::array<char, kClassCount> out{};
    for (int i = 0; i < static_cast<int>(kClassCount); ++i) out[i] = label_at(i);
    return out;
  }
};

// ---------------------------------------------------------------------------
// CRC-32 (reflected, polynomial 0xEDB88320), as used by zip/png.

inline std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int bit = 0; bit < 8; ++bit) c = (c & 1) ? (0xedb88320u ^ (c >> 1)) : (c >> 1);
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  crc = ~crc;
  for (std::size_t i = 0; i < size; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

}  // namespace scrawl
