#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "steerkit/control.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

struct TauRho {
  double tau = 0.0;
  double rho = 0.0;
};

// tau = safety * min(span, eps/(4L), eps/(8 L F_sup)), vacuous terms dropped;
// rho = tau eps / 4.
TauRho compute_tau_rho(double L, double F_sup, double span, double eps, double safety = 0.9);

struct LocalSteerParams {
  double epsilon = 0.0;
  double tau = 0.0;
  double rho = 0.0;
  double L = 0.0;
  double F_sup = 0.0;
  double span = 0.0;
};

struct SteerSegment {
  ControlSchedule schedule;  // zero on [a, s - tau], steer on (s - tau, s]
  Vec target, alpha, z, x_start;
  double a = 0.0, s = 0.0, tau = 0.0;
  double bound = 0.0;  // |alpha| + L * visited radius
  LocalSteerParams params;
  // Corrected path: the input trajectory up to s - tau, then the straight line
  // x_start + (t - s + tau)(F(z) + alpha).
  Vec path(double t) const;
  Vec slope() const { return fz + alpha; }

  Vec fz;
  const Trajectory* source = nullptr;
};

// Shifts the endpoint of traj (on [a, s]) to y with a control active only on
// the last tau of the interval. F is looked up as field_id inside the emitted
// descriptor. Without params, tau and rho come from compute_tau_rho.
SteerSegment steer_endpoint(const VectorField& F, const std::string& field_id, const Trajectory& traj, const Vec& y,
                            double eps, std::optional<LocalSteerParams> params = std::nullopt);

}  // namespace steerkit
