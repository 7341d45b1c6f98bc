#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/traj_correct.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

// Flat-torus distance |torus_diff(a, b)|.
double torus_distance(const Vec& a, const Vec& b, double period);

struct TransitOptions {
  int n_candidates = 16;
  std::uint64_t seed = 1;
  double T_max = 1e4;
  double path_max = 100.0;  // longest chord per step; events are found by walking it
  Settings settings = Settings::with(Method::dop853, 1e-12);
  int max_refinements = 4;  // start shifts per candidate after a near miss
  int threads = 0;          // 0: hardware concurrency
  // Keep at most this many sampled states of the transit.
  size_t keep_points = 20000;
};

struct Transit {
  Vec x1, x2;     // start near p, hit point near q (wrapped)
  double T = 0.0;
  double miss_start = 0.0, miss_end = 0.0;  // |x1 - p|, |x2 - q| on the torus
  int candidate = 0;
  int refinements = 0;
  long steps = 0;
  Trajectory traj;  // thinned samples of the transit
  nlohmann::json to_json() const;
};

// Shoots from low-discrepancy starts in B_{delta^3/2}(p) (p first) and stops at
// the first closest approach to q within delta^3/2. Throws NoTransitFound with
// the best approach.
Transit find_transit(const VectorField& V, const Vec& p, const Vec& q, double delta, const TransitOptions& opt = {});

struct ConnectOptions {
  TransitOptions transit;
  std::optional<double> delta;  // default: choose_delta(local stats, eps/2, C1)
  int max_shrink = 6;
  int audit_samples = 10000;   // per ball
  int exterior_samples = 1000;
  std::uint64_t seed = 5;
  double stats_radius = 2.0;
  // Long transits cross the balls ~1e6 times; per-pass error must stay near 1e-13.
  Settings verify = Settings::with(Method::dop853, 1e-14);
  int checkpoints = 8;  // gluing comparison times strictly between the balls
};

struct ConnectResult {
  VectorField field;  // equals V outside B_2delta(x1) and B_2delta(x2)
  Transit transit;
  Trajectory traj;    // glued trajectory from p, thinned
  double delta = 0.0;
  double terminal_error = 0.0;  // |y(T) - q| on the torus
  double closest_approach = 0.0;  // min distance to q over the final step
  PhiAudit audit_p, audit_q;
  double sup_dev = 0.0, lip_dev = 0.0;
  bool exterior_bitwise = false;
  int exterior_checked = 0;
  double div_drift = 0.0;
  double gluing_deviation = 0.0, gluing_allowance = 0.0;
  nlohmann::json certificate;
};

// Throws SupportOverlap when the two balls cannot be separated.
ConnectResult connect(const VectorField& V, const Vec& p, const Vec& q, double eps, const ConnectOptions& opt = {});

}  // namespace steerkit
