#include "steerkit/steer_local.hpp"

#include <algorithm>
#include <cmath>

#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"

namespace steerkit {

TauRho compute_tau_rho(double L, double F_sup, double span, double eps, double safety) {
  if (!(span > 0.0) || !(eps > 0.0) || !(safety > 0.0) || safety > 1.0)
    throw Error(ErrorCode::HypothesisViolation, "compute_tau_rho needs span > 0, eps > 0, safety in (0,1]",
                {{"span", span}, {"eps", eps}, {"safety", safety}});
  double m = span;
  if (L > 0.0) m = std::min(m, eps / (4.0 * L));
  if (L * F_sup > 0.0) m = std::min(m, eps / (8.0 * L * F_sup));
  TauRho r;
  r.tau = safety * m;
  r.rho = r.tau * eps / 4.0;
  return r;
}

Vec SteerSegment::path(double t) const {
  const double t0 = s - tau;
  if (t <= t0) return source ? source->at(t) : x_start;
  return x_start + (t - t0) * slope();
}

SteerSegment steer_endpoint(const VectorField& F, const std::string& field_id, const Trajectory& traj, const Vec& y,
                            double eps, std::optional<LocalSteerParams> params) {
  if (traj.size() < 2) throw Error(ErrorCode::HypothesisViolation, "steering needs a trajectory with positive span");
  const double a = traj.t0(), s = traj.t1();
  LocalSteerParams P;
  if (params) {
    P = *params;
  } else {
    P.epsilon = eps;
    P.L = F.lip_bound;
    P.F_sup = F.sup_bound;
    P.span = s - a;
    TauRho tr = compute_tau_rho(P.L, P.F_sup, P.span, eps);
    P.tau = tr.tau;
    P.rho = tr.rho;
  }
  const Vec z = traj.states().back();
  const double miss = (z - y).norm();
  if (!(miss < P.rho))
    throw Error(ErrorCode::TargetOutOfRange, "target farther than rho from the trajectory end",
                {{"distance", miss}, {"rho", P.rho}});

  SteerSegment out;
  out.source = &traj;
  out.params = P;
  out.a = a;
  out.s = s;
  out.target = y;
  out.z = z;
  const double t0 = s - P.tau;
  // The integrator replays exactly s - t0, which may differ from tau by an ulp.
  out.tau = s - t0;
  out.x_start = traj.state_at(t0);
  out.fz = F(z);
  const Vec xbar_s = out.x_start + out.tau * out.fz;
  out.alpha = (y - xbar_s) / out.tau;
  // x_eps is a segment from x_start to y, so its distance to z peaks at an end.
  const double radius = std::max((out.x_start - z).norm(), (y - z).norm());
  out.bound = out.alpha.norm() + P.L * radius;
  if (!(out.alpha.norm() < P.epsilon / 2.0) || !(out.bound < P.epsilon))
    throw Error(ErrorCode::BudgetExceeded, "local steering bound not below epsilon",
                {{"alpha", out.alpha.norm()}, {"bound", out.bound}, {"epsilon", P.epsilon}});

  Descriptor d;
  d.kind = SegmentKind::steer;
  d.z = z;
  d.alpha = out.alpha;
  d.s = s;
  d.tau = out.tau;
  d.x_start = out.x_start;
  d.base = field_id;
  d.bound = out.bound;
  if (t0 > a) out.schedule.append({a, t0, Descriptor::zero()});
  out.schedule.append({t0, s, d});
  out.schedule.sup_cert = out.bound;
  return out;
}

}  // namespace steerkit
