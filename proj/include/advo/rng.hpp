#pragma once

#include <cstdint>
#include <array>

namespace advo {

/// Deterministic PRNG (xoshiro256++ seeded via splitmix64). Hand-rolled so
/// that streams are reproducible across platforms and trivially serializable
/// (state is four u64 words), which std::mt19937_64 + distributions are not.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    // Rejection sampling keeps the draw exactly uniform.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do { x = next_u64(); } while (x >= limit);
    return x % n;
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

/// Named sub-streams derived from one master seed. Each component of a run
/// (weight init, validation split, batch shuffle, dropout, dataset builders)
/// draws from its own stream so that changing e.g. the batch size never
/// perturbs weight initialization.
enum class Stream : uint64_t {
  kInit = 1,
  kSplit = 2,
  kShuffle = 3,
  kDropout = 4,
  kSynthetic = 5,
  kVariant = 6,
  kSubset = 7,
};

inline Rng derive_stream(uint64_t master_seed, Stream stream) {
  uint64_t x = master_seed ^ (0xA0761D6478BD642Full * static_cast<uint64_t>(stream));
  return Rng(Rng::splitmix64(x));
}

/// Per-epoch shuffle key: one stream, decorrelated across epochs.
inline Rng derive_epoch(uint64_t shuffle_seed, uint64_t epoch) {
  uint64_t x = shuffle_seed ^ (0xE7037ED1A0B428DBull * (epoch + 1));
  return Rng(Rng::splitmix64(x));
}

}  // namespace advo
