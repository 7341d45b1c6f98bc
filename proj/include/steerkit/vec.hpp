#pragma once

#include <Eigen/Dense>

namespace steerkit {

// Small fixed-capacity vectors: dimension is a runtime value but storage never
// touches the heap.
constexpr int kMaxDim = 4;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Minimal-image displacement a - b on a cube torus of the given period.
inline Vec torus_diff(const Vec& a, const Vec& b, double period) {
  Vec d = a - b;
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] -= period * std::round(d[i] / period);
  return d;
}

inline Vec torus_wrap(const Vec& a, double period) {
  Vec w = a;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w[i] -= period * std::floor(w[i] / period);
    if (w[i] >= period) w[i] -= period;
  }
  return w;
}

}  // namespace steerkit
