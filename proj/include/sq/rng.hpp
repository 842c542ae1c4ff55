#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "sq/errors.hpp"
#include "sq/linalg.hpp"

namespace sq {

// Seeded stream built on std::mt19937_64. The conversions to doubles and
// categorical draws are spelled out here rather than going through
// std::*_distribution, whose output is implementation-defined; run records
// must be byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (one draw per call, second discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int below(int n) {
    detail::require(n > 0, "Rng::below: n must be positive");
    return static_cast<int>(uniform() * n);
  }

  // Index drawn proportionally to nonnegative weights.
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    detail::require(total > 0.0, "Rng::categorical: weights must have positive mass");
    const double u = uniform() * total;
    double acc = 0.0;
    int last_positive = -1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      acc += weights[i];
      last_positive = static_cast<int>(i);
      if (u < acc) return last_positive;
    }
    return last_positive;
  }

  // Independent child stream, e.g. one per Monte-Carlo trial.
  Rng split() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

  Vec unit_ball(int d) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v(i) = normal();
    const double n = v.norm();
    if (n > 0.0) v /= n;
    return v * std::pow(uniform(), 1.0 / d);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sq
