#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/vec.hpp"

namespace steerkit {

// Doubles round-trip exactly through nlohmann's shortest representation;
// non-finite values become the strings "inf", "-inf" and "nan".
inline nlohmann::json num_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double num_from(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
  }
  throw Error(ErrorCode::ConfigError, "expected a number, got " + j.dump());
}

inline nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num_json(v[i]));
  return a;
}

inline Vec vec_from(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || j.size() > static_cast<size_t>(kMaxDim))
    throw Error(ErrorCode::ConfigError, "expected a point with 1.." + std::to_string(kMaxDim) + " coordinates");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = num_from(j[i]);
  return v;
}

inline bool same_vec(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!(a[i] == b[i]) && !(std::isnan(a[i]) && std::isnan(b[i]))) return false;
  return true;
}

}  // namespace steerkit
