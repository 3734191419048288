#pragma once

// Counter-based random streams. A stream is identified by the key
// (seed, worker_id, purpose); draw n is a pure function of (key, n), so
// streams are reproducible, independent of scheduling, and disjoint by
// construction for different purposes.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

namespace lorentz {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_purpose(std::string_view purpose) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class RandomStream {
 public:
  using result_type = std::uint64_t;

  RandomStream(std::uint64_t seed, std::uint64_t worker_id, std::string_view purpose)
      : key_(mix64(mix64(mix64(seed) ^ (worker_id + 0x9e3779b97f4a7c15ULL)) ^ hash_purpose(purpose))) {}

  /// Child stream; used to give each sample or sweep cell its own counter space.
  RandomStream split(std::uint64_t index) const {
    RandomStream child = *this;
    child.key_ = mix64(key_ ^ mix64(index + 0x632be59bd9b4e019ULL));
    child.counter_ = 0;
    return child;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix64(mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_) ^ key_); }

  /// Uniform on [0, 1) with 53 bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do u = uniform();
    while (u == 0.0);
    return u;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lorentz
