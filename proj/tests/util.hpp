#pragma once

#include <cmath>
#include <random>

#include "steerkit/vec.hpp"
#include "steerkit/vectorfield.hpp"

namespace testutil {

using steerkit::Vec;

inline Vec uniform_point(std::mt19937_64& rng, double lo, double hi, int d = 2) {
  std::uniform_real_distribution<double> U(lo, hi);
  Vec x(d);
  for (int i = 0; i < d; ++i) x[i] = U(rng);
  return x;
}

inline steerkit::VectorField cellular() { return steerkit::builtin_field("cellular", {}); }
inline steerkit::VectorField rotation(double radius = INFINITY) {
  if (std::isfinite(radius)) return steerkit::builtin_field("rotation", {{"radius", radius}});
  return steerkit::builtin_field("rotation", {});
}
inline steerkit::VectorField constant(double c1, double c2) {
  return steerkit::builtin_field("constant", {{"c1", c1}, {"c2", c2}});
}

}  // namespace testutil
