#pragma once

#include <cmath>
#include <cstdint>

namespace mtpeft {

// Stateless mixing of a 64-bit value (splitmix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag + 0x632BE59BD9B4E019ULL));
}

// Counter-based generator: the value at (key, counter) never depends on call order
// elsewhere, so a dropout mask is reproducible from its stream id alone.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 42) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // A fresh stream key; each call site that needs randomness takes one.
  std::uint64_t next_stream() { return derive_seed(seed_, streams_++); }

  static std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) {
    return mix64(stream ^ mix64(counter));
  }

  // Uniform in [0, 1) with 53 random bits.
  static double uniform(std::uint64_t stream, std::uint64_t counter) {
    return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
  }

  std::uint64_t streams_used() const { return streams_; }
  void reset(std::uint64_t streams_used = 0) { streams_ = streams_used; }

 private:
  std::uint64_t seed_;
  std::uint64_t streams_ = 0;
};

}  // namespace mtpeft
