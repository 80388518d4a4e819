#include "cseg/rng.hpp"

#include <cmath>
#include <numbers>

namespace cseg {

double CounterRng::uniform(std::uint64_t counter) const {
  // 53 random mantissa bits, shifted off zero.
  return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t index) const {
  const std::uint64_t pair = index / 2;
  const double u1 = uniform(2 * pair);
  const double u2 = uniform(2 * pair + 1);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return (index % 2 == 0) ? r * std::cos(theta) : r * std::sin(theta);
}

long RngStream::uniform_int(long lo, long hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<long>(next_bits() % span);
}

double RngStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace cseg
