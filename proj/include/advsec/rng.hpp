#pragma once

#include <cstdint>
#include <string_view>

namespace advsec {

constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// FNV-1a over the bytes of a purpose tag.
constexpr uint64_t tag_hash(std::string_view tag) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Seed of the stream owned by one (experiment, index, purpose) triple. Index is
// a sample index for per-sample streams, or a batch/epoch counter elsewhere.
constexpr uint64_t stream_seed(uint64_t experiment_seed, uint64_t index,
                               std::string_view purpose) {
  return splitmix64(experiment_seed ^ splitmix64(index) ^ tag_hash(purpose));
}

// Counter-based generator: the splitmix64 sequence started at a stream seed.
// All draws are fully specified so any implementation reproduces them bit for bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}
  Rng(uint64_t experiment_seed, uint64_t index, std::string_view purpose)
      : state_(stream_seed(experiment_seed, index, purpose)) {}

  uint64_t next_u64() {
    uint64_t out = splitmix64(state_);
    state_ += 0x9E3779B97F4A7C15ULL;
    return out;
  }

  // Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be positive.
  uint64_t below(uint64_t n) {
    auto k = static_cast<uint64_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal();

 private:
  uint64_t state_;
};

}  // namespace advsec
