#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerkit/control.hpp"
#include "steerkit/correct_field.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

struct RhoTau {
  double rho = 0.0;
  double tau = 0.0;
};

// rho = 0.9 min(1/4, eps^2/(144(L+eps)), eps^2/(288(L+eps)(S+eps))), tau = rho eps/12.
RhoTau choose_rho_tau(double lip, double sup, double eps);
RhoTau choose_rho_tau(const VectorField& V, double eps);

// Uniform points on [p, q] with spacing <= 0.9 rho/4; first p, last q exactly.
size_t waypoint_count(const Vec& p, const Vec& q, double rho);
Vec waypoint(const Vec& p, const Vec& q, size_t n, size_t j);
std::vector<Vec> waypoints(const Vec& p, const Vec& q, double rho);

struct PlanRequest {
  Vec p, q;
  double epsilon = 0.0;
  double T_max = 1000.0;  // per recurrence search
  int n_candidates = 8;
  std::uint64_t seed = 1;
  bool include_center = true;
  double terminal_tol = 1e-3;
  int audit_samples = 2000;
  int steer_samples = 5;  // per hop, for the sampled |u_n|
  std::optional<CorrectionMethod> correction;  // default: stream when V has a potential
  std::optional<Box> roi;                      // default: padded bounding box of p, q
  int correction_resolution = 256;
  std::vector<double> vmd_box_sizes{10.0, 20.0, 40.0, 80.0};
  int vmd_resolution = 64;
  double stats_radius = 2.0;
  Settings design = Settings::with(Method::dop853, 1e-11);
  Settings search = Settings::with(Method::dop853, 1e-8);
  // Tracking gain of the steer segments, in units of 1/tau; 0 replays open loop.
  double steer_gain = 20.0;
  double verify_factor = 10.0;
  int threads = 0;  // recurrence searches; 0: hardware concurrency
  std::function<void(const std::string&, size_t, size_t)> progress;

  nlohmann::json to_json() const;
};

struct PlanResult {
  Vec p, q;
  double epsilon = 0.0;
  double T = 0.0;
  ControlSchedule control;
  FieldRegistry registry;        // "V", "Vt" and, with a bridge, "Vbar"
  nlohmann::json registry_spec;  // enough to rebuild the registry from V
  Trajectory trajectory;         // hop boundaries, x(0) = p
  double terminal_error = 0.0;
  double sup_u_sampled = 0.0;
  nlohmann::json certificate;
  Settings design;
  double terminal_tol = 1e-3;
  bool ok() const { return certificate.value("pass", false); }
};

// Throws VMDViolation, NoReturnFound (with the waypoint index) or
// BudgetExceeded (with the violated inequality).
PlanResult plan(const VectorField& V, const PlanRequest& req);

// Rebuilds "V", "Vt" and optionally "Vbar" from registry_spec.
FieldRegistry rebuild_registry(const VectorField& V, const nlohmann::json& registry_spec);

struct VerifyReport {
  bool pass = true;
  double terminal_error = 0.0;
  double sup_u = 0.0;
  long steps = 0;
  nlohmann::json checks = nlohmann::json::object();
  nlohmann::json to_json() const;
};

// Re-integrates x' = V(x) + u(t) from p at factor-times finer tolerance and
// re-checks the certificate invariants.
VerifyReport verify_plan(const VectorField& V, const PlanResult& r, std::optional<Settings> s = std::nullopt,
                         double factor = 10.0);

// Plot rows (t, |u(t)|, |x(t) - q|) at the trajectory's knots.
void write_plotdata(std::ostream& os, const VectorField& V, const PlanResult& r);

}  // namespace steerkit
