#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

enum class TimeDirection { forward, backward };

struct RecurrenceResult {
  Vec point;
  double return_time = 0.0;
  double return_error = 0.0;
  TimeDirection direction = TimeDirection::forward;
  int candidate = 0;  // index in the candidate sequence
  nlohmann::json to_json() const;
  static RecurrenceResult from_json(const nlohmann::json& j);
};

struct RecurrenceOptions {
  int n_candidates = 16;
  std::uint64_t seed = 1;
  // Candidate 0 is the ball's centre when set.
  bool include_center = true;
  TimeDirection direction = TimeDirection::forward;
  Settings settings = [] {
    Settings s;
    s.method = Method::dop853;
    s.atol = s.rtol = 1e-10;
    return s;
  }();
};

// Searches B_delta(center) for a point whose orbit returns within
// return_radius at some T in [T_min, T_max]; the first such return in time
// wins, candidates are tried in sequence order.
RecurrenceResult find_poisson_stable(const VectorField& V, const Vec& center, double delta, double return_radius,
                                     double T_min, double T_max, const RecurrenceOptions& opt = {});

// Local minima of |x(t) - x'| with value <= radius, refined by bisection.
std::vector<double> near_returns(const Trajectory& traj, const Vec& xp, double radius);

double nonwandering_fraction(const VectorField& V, const Box& box, int n_points, double radius, double T_max,
                             std::uint64_t seed, const Settings& s = RecurrenceOptions{}.settings);

}  // namespace steerkit
