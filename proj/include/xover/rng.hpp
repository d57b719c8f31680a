#pragma once

#include <cmath>
#include <cstdint>

namespace xover {

// xoshiro256++ with SplitMix64 seeding. Hand-rolled so that streams are
// identical across platforms and standard-library versions; the simulator's
// determinism contract (same seed => same results at any thread count)
// depends on that, and std::normal_distribution makes no such promise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    // SplitMix64 expansion of the seed into the 256-bit state.
    std::uint64_t x = seed;
    for (auto& w : s_) {
      x += 0x9e3779b97f4a7c15ull;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      w = z ^ (z >> 31);
    }
  }

  // Derives the stream for one replicate of one scenario. Uses SplitMix64 as
  // a mixing function so neighbouring indices give unrelated states.
  static Rng for_replicate(std::uint64_t master_seed, std::uint64_t scenario_id,
                           std::uint64_t replicate) {
    std::uint64_t h = master_seed;
    h ^= 0x9e3779b97f4a7c15ull + (scenario_id << 6) + (scenario_id >> 2);
    h *= 0xff51afd7ed558ccdull;
    h ^= replicate + 0x632be59bd9b4e019ull;
    h *= 0xc4ceb9fe1a85ec53ull;
    h ^= h >> 33;
    return Rng(h);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on (0,1); 53-bit mantissa, never exactly 0 or 1.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Marsaglia's polar method (no trig, spare cached).
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_uniform() - 1.0;
      v = 2.0 * next_uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Fisher-Yates shuffle of [first, last).
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = bounded(i);  // j in [0, i)
      auto tmp = first[i - 1];
      first[i - 1] = first[j];
      first[j] = tmp;
    }
  }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t bounded(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace xover
