#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace cwt {

// Counter-based random stream. Every draw is a pure function of (seed, counter),
// so a run can be replayed from any recorded position.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; the parent is not advanced.
  CounterRng split(std::uint64_t stream_id) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace cwt
