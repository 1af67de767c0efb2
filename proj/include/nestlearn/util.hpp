#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace nestlearn {

/// Counter-based pseudo-random generator (stateless mix of key and counter).
/// Streams with distinct keys are independent; replaying a key replays the
/// exact sequence on any platform.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return mix(key_, counter_++); }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  /// Uniform double in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  static std::uint64_t mix(std::uint64_t key, std::uint64_t counter) {
    std::uint64_t z = key + 0x9e3779b97f4a7c15ULL * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Pairwise (cascade) summation: fixed reduction tree, so the result does not
/// depend on thread count or accumulation chunking chosen by callers.
double pairwise_sum(std::span<const double> xs);

/// Fisher-Yates permutation of {0,...,n-1} driven by a CounterRng.
std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng);

}  // namespace nestlearn
