#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "csgemos/error.hpp"

namespace csgemos {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Seeded random stream. All variates are generated from raw 64-bit engine
// output with the algorithms below (never std:: distributions), so a seed
// yields the same sequence on every standard library.
//
// Streams are not shared between threads; derive one substream per worker.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(detail::splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  RandomStream substream(std::string_view name) const {
    return RandomStream(detail::splitmix64(seed_ ^ detail::fnv1a(name)));
  }
  RandomStream substream(std::uint64_t index) const {
    return RandomStream(detail::splitmix64(seed_ + detail::splitmix64(index + 1)));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 12) + 0.5) * 0x1.0p-52;
  }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw DomainError("RandomStream::below: empty range");
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal (Marsaglia polar method, one value per accepted pair).
  double normal() {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
  }

  /// Unit-scale gamma variate (Marsaglia-Tsang squeeze; shape < 1 boosted
  /// through Gamma(shape + 1) * U^(1/shape)).
  double gamma(double shape) {
    detail::require_finite(shape, "RandomStream::gamma");
    if (shape <= 0.0) throw DomainError("RandomStream::gamma: shape must be positive");
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::exp(std::log(uniform_open()) / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace csgemos
