#include "cwt/rng.hpp"

#include <cmath>
#include <numbers>

namespace cwt {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t CounterRng::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t CounterRng::uniform_index(std::size_t n) {
  // Multiply-shift; bias is below 2^-40 for the sizes used here.
  const unsigned __int128 wide =
      static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
  return static_cast<std::size_t>(wide >> 64);
}

double CounterRng::normal() {
  // Box-Muller without caching the second variate keeps draws replayable.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

CounterRng CounterRng::split(std::uint64_t stream_id) const {
  return CounterRng(mix64(seed_ ^ mix64(stream_id + 0x632be59bd9b4e019ULL)));
}

}  // namespace cwt
