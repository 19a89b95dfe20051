#pragma once
// SplitMix64: 64-bit splittable generator (Steele, Lea & Flood 2014).
// Chosen because independent streams are derived by pure arithmetic on the
// seed, which keeps parallel replication draws identical for any worker count.
#include <cstdint>
#include <cmath>

namespace ddc {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

// finalizer of SplitMix64; also used as a seed mixer
inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z += kGoldenGamma;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kGoldenGamma;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform on [0,1): 53-bit mantissa
  double next_uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // uniform on (0,1): offset keeps log() finite on both tails
  double next_uniform_open() { return ((next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // standard Gumbel (extreme value type I, location 0 scale 1)
  double next_gumbel() { return -std::log(-std::log(next_uniform_open())); }

 private:
  std::uint64_t state_;
};

// deterministic per-replication stream, independent of worker scheduling
inline std::uint64_t replication_seed(std::uint64_t base_seed, std::uint64_t index) {
  return splitmix64_mix(base_seed ^ (kGoldenGamma * (index + 1)));
}

inline constexpr const char* kRngIdentity = "splitmix64";

}  // namespace ddc
