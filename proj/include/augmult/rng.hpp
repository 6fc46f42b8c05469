#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace augmult {

// SplitMix64 finalizer. Doubles as the hash for counter-based seeding and as
// the step function of the generator below. All randomness in this project
// flows through these two so that runs are bit-reproducible across platforms
// and thread counts (std::shuffle and std::normal_distribution are
// implementation-defined and would break that contract).
constexpr uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

constexpr uint64_t hash_combine(uint64_t h, uint64_t v) {
  return mix64(h + 0x9e3779b97f4a7c15ULL + v);
}

template <typename... Rest>
constexpr uint64_t hash_combine(uint64_t h, uint64_t v, Rest... rest) {
  return hash_combine(hash_combine(h, v), rest...);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log argument.
  double next_unit_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform on {0, ..., n-1}. Modulo bias is < n / 2^64, far below anything
  // the statistical tests can resolve.
  int next_below(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  bool next_bernoulli(double p) { return next_unit() < p; }

  // Standard normal via Box-Muller; the pair is cached.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_unit_pos();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace augmult
