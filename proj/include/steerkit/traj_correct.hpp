#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "json.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

// Radial smooth step phi(x) = eta(|x|): eta = 1 on [0,1], 0 on [2, inf), glued
// with exp(-1/t) so every derivative is continuous.
struct BumpFunction {
  // Upper bounds of sup|eta'| and of the Hessian operator norm
  // max(sup|eta''|, sup|eta'|/r), from dense sampling with a small margin.
  static constexpr double kGradSup = 2.0 + 1e-9;
  static constexpr double kHessSup = 9.842;

  double grad_sup = kGradSup;
  double hess_sup = kHessSup;

  static double eta(double r);
  static double deta(double r);
  static double d2eta(double r);

  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Mat hess(const Vec& x) const;

  // Dense 1-D audit of the stored constants.
  struct Audit {
    double grad_max = 0.0, hess_max = 0.0;
    bool ok = false;
  };
  static Audit audit(int samples = 2'000'000);
  static nlohmann::json constants_json();
};

// Phi(x) = x - phi((x - x0)/delta) (y0 - x0).
class PhiMap {
 public:
  PhiMap(const Vec& x0, const Vec& y0, double delta, BumpFunction bump = {});

  const Vec& x0() const { return x0_; }
  const Vec& y0() const { return y0_; }
  double delta() const { return delta_; }
  const BumpFunction& bump() const { return bump_; }
  bool identity() const { return d_.isZero(0.0); }

  double phi(const Vec& x) const;
  Vec grad_phi(const Vec& x) const;
  Vec forward(const Vec& x) const;
  Mat jacobian(const Vec& x) const;
  // (D Phi(x))^{-1} by Sherman-Morrison.
  Mat jacobian_inverse(const Vec& x) const;
  // d/dx_j of D Phi(x).
  Mat jacobian_derivative(const Vec& x, int j) const;
  // Fixed-point inverse to 1e-12.
  Vec inverse(const Vec& y) const;

 private:
  Vec x0_, y0_, d_;
  double delta_;
  BumpFunction bump_;
};

// Largest admissible delta: below 0.999 min(1, grad_sup^{-1/2}) with the C0
// (and, when need_c1, C1) deviation bounds under eps/2.
struct FieldStats {
  double sup = 0.0;
  double lip = 0.0;
  // Nondecreasing majorant of the Jacobian's modulus of continuity.
  std::function<double(double)> omega;
  bool omega_certified = false;
};

double c0_bound(const FieldStats& st, double delta, const BumpFunction& b = {});
double c1_bound(const FieldStats& st, double delta, const BumpFunction& b = {});
double choose_delta(const FieldStats& st, double eps, bool need_c1, const BumpFunction& b = {});

// Sampled sup over the closed ball B_R(center) (5% margin), declared Lipschitz
// bound when finite, and the Jacobian modulus over dyadic radii.
FieldStats local_stats(const VectorField& V, const Vec& center, double R, bool need_c1, int n_samples = 4096,
                       std::uint64_t seed = 7);

// y -> (D Phi(y))^{-1} V(Phi(y)); V(y) itself outside B_2delta(x0).
VectorField pushforward_field(const VectorField& V, const PhiMap& map, const std::string& name = "pushforward");

enum class Direction { forward, backward };

struct PhiAudit {
  int samples = 0;
  double displacement_max = 0.0, displacement_bound = 0.0;  // |y - Phi(y)| vs delta^3
  double jac_dev_max = 0.0, jac_dev_bound = 0.0;            // ||D Phi - I|| vs grad_sup delta^2
  double jac_deriv_max = 0.0, jac_deriv_bound = 0.0;        // ||d_j D Phi|| vs hess_sup delta
  double field_sup_dev = 0.0, field_lip_dev = 0.0;          // sampled ||V - Vt||_inf, Lip(V - Vt)
  double inverse_err = 0.0;
  int violations = 0;
  nlohmann::json to_json() const;
};

PhiAudit audit_phi(const VectorField& V, const VectorField& Vt, const PhiMap& map, int n, std::uint64_t seed);

struct CorrectStartResult {
  VectorField field;
  Trajectory traj;
  PhiMap map;
  double delta = 0.0;
  double c0 = 0.0, c1 = 0.0;
  double coincidence_error = 0.0;  // max |y - x| where both are outside B_2delta
  double sup_dev = 0.0, lip_dev = 0.0;
  bool c1_certified = false;
  nlohmann::json to_json() const;
};

// Moves the start (forward) or end (backward) of traj to y0 by pushing V
// forward under a bump map around that anchor.
CorrectStartResult correct_start(const VectorField& V, const Trajectory& traj, const Vec& y0, double eps,
                                 Direction dir, bool need_c1, const Settings& s = {}, double stats_radius = 2.0);

}  // namespace steerkit
