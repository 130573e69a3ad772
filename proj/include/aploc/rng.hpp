#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace aploc {

// Counter-free splittable generator built on the SplitMix64 mixing function.
// Independent streams are derived from (masterSeed, streamId, index), so
// Monte-Carlo trials can be generated in any order / on any thread and still
// reproduce bit-identical results.
class Rng {
 public:
  // Well-known stream ids used across the library; keeping waveform and
  // noise draws on separate streams means changing one never perturbs the
  // other.
  enum Stream : std::uint64_t {
    kWaveforms = 1,
    kNoise = 2,
    kPlacement = 3,
    kGeneric = 4,
  };

  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  // Fold an arbitrary list of identifiers into one seed.
  static std::uint64_t derive(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t s = 0x8000000000000001ULL;
    for (std::uint64_t p : parts) s = mix(s ^ mix(p));
    return s;
  }

  static Rng stream(std::uint64_t master, std::uint64_t streamId,
                    std::uint64_t index = 0) {
    return Rng(derive({master, streamId, index}));
  }

  std::uint64_t nextU64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  // Uniform in [0,1).
  double uniform() {
    return static_cast<double>(nextU64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return nextU64() % n; }

  // Standard normal via Box-Muller; one fresh pair per two calls.
  double normal() {
    if (haveSpare_) {
      haveSpare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    haveSpare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool haveSpare_ = false;
};

}  // namespace aploc
