#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bra/tensor.hpp"

namespace bra {

// Deterministic sampling built on mt19937_64 with explicit transforms, so
// identical seeds give identical streams on every standard library.

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double normal_sample(std::mt19937_64& rng) {
  // Box-Muller; the sine half of the pair is discarded.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

/// Normal(0, stddev) truncated to +/- 2 stddev by rejection.
inline double trunc_normal_sample(std::mt19937_64& rng, double stddev) {
  for (;;) {
    const double z = normal_sample(rng);
    if (std::fabs(z) <= 2.0) return z * stddev;
  }
}

template <typename T>
void fill_trunc_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(trunc_normal_sample(rng, stddev));
}

template <typename T>
Tensor<T> random_uniform(Shape shape, std::mt19937_64& rng, T lo, T hi) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = lo + static_cast<T>(uniform01(rng)) * (hi - lo);
  return t;
}

template <typename T>
Tensor<T> random_normal(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(normal_sample(rng) * stddev);
  return t;
}

}  // namespace bra
