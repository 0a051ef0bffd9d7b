// Deterministic randomness utilities.
//
// std::mt19937_64 output is fully specified by the standard, but the
// distributions on top of it are not, so everything here draws raw 64-bit
// words and maps them explicitly. This keeps artifacts byte-identical
// across platforms for a fixed seed.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ocds {

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent per-stage seed from a global seed and a stage name.
std::uint64_t stage_seed(std::uint64_t global_seed, std::string_view stage);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double on the open interval (0, 1).
  double next_unit_open();

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n);

  // Fisher-Yates shuffle with explicit bounded draws.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ocds
