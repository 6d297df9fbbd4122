#pragma once

#include "dp2erm/core.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dp2erm {

/// Philox4x64-10 counter-based generator (Salmon et al. 2011). Every
/// (key, counter) pair maps to four independent 64-bit words, so streams are
/// addressed by key and never overlap.
class Philox {
 public:
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  Philox(std::uint64_t seed, std::uint64_t stream) : key_{seed, stream} {}

  result_type operator()() {
    if (position_ == 4) {
      buffer_ = block(counter_, key_);
      increment();
      position_ = 0;
    }
    return buffer_[position_++];
  }

  static std::array<std::uint64_t, 4> block(std::array<std::uint64_t, 4> ctr,
                                            std::array<std::uint64_t, 2> key) {
    constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
    constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
    constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
    constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;
    for (int round = 0; round < 10; ++round) {
      const unsigned __int128 p0 =
          static_cast<unsigned __int128>(kMul0) * ctr[0];
      const unsigned __int128 p1 =
          static_cast<unsigned __int128>(kMul1) * ctr[2];
      const auto hi0 = static_cast<std::uint64_t>(p0 >> 64);
      const auto lo0 = static_cast<std::uint64_t>(p0);
      const auto hi1 = static_cast<std::uint64_t>(p1 >> 64);
      const auto lo1 = static_cast<std::uint64_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  void increment() {
    for (auto& word : counter_)
      if (++word != 0) break;
  }

  std::array<std::uint64_t, 2> key_;
  std::array<std::uint64_t, 4> counter_{0, 0, 0, 0};
  std::array<std::uint64_t, 4> buffer_{};
  int position_ = 4;
};

/// Samplers with fully specified algorithms, so a seed reproduces the same
/// draws on every platform and standard library.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(seed, stream) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1), never exactly 0 or 1.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("below(0)");
    const std::uint64_t limit = max_multiple(bound);
    for (;;) {
      const std::uint64_t r = engine_();
      if (r < limit) return r % bound;
    }
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Gamma(shape, scale) via Marsaglia-Tsang; shape < 1 uses the
  /// U^(1/shape) boost.
  double gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
      throw std::invalid_argument("gamma needs shape > 0 and scale > 0");
    if (shape < 1.0)
      return gamma(shape + 1.0, scale) * std::pow(uniform(), 1.0 / shape);
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double z;
      double v;
      do {
        z = normal();
        v = 1.0 + c * z;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * z * z * z * z ||
          std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v)))
        return d * v * scale;
    }
  }

  bool bernoulli(double probability) { return uniform() < probability; }

 private:
  static std::uint64_t max_multiple(std::uint64_t bound) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    return max - (max % bound);
  }

  Philox engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Identifies one independent random stream within an experiment.
struct StreamId {
  std::uint32_t replicate = 0;
  std::uint8_t scheme = 0;     // < 256
  std::uint8_t mechanism = 0;  // < 16
  std::uint16_t epsilon = 0;   // < 4096
  std::uint8_t stage = 0;      // < 256

  std::uint64_t pack() const {
    if (mechanism >= 16 || epsilon >= 4096)
      throw std::out_of_range("stream id field out of range");
    return (static_cast<std::uint64_t>(replicate) << 32) |
           (static_cast<std::uint64_t>(scheme) << 24) |
           (static_cast<std::uint64_t>(mechanism) << 20) |
           (static_cast<std::uint64_t>(epsilon) << 8) |
           static_cast<std::uint64_t>(stage);
  }
};

inline Rng make_rng(std::uint64_t seed, const StreamId& id) {
  return Rng(seed, id.pack());
}

}  // namespace dp2erm
