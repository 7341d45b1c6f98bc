#include "steerkit/traj_correct.hpp"

#include <algorithm>
#include <cmath>

#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"

namespace steerkit {

namespace {

double glue(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }
double glue1(double t) { return t > 0.0 ? glue(t) / (t * t) : 0.0; }
double glue2(double t) { return t > 0.0 ? glue(t) * (1.0 / (t * t * t * t) - 2.0 / (t * t * t)) : 0.0; }

double op_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Eigen::MatrixXd A = M;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  return svd.singularValues()(0);
}

}  // namespace

double BumpFunction::eta(double r) {
  if (r <= 1.0) return 1.0;
  if (r >= 2.0) return 0.0;
  double a = glue(2.0 - r), b = glue(r - 1.0);
  return a / (a + b);
}

double BumpFunction::deta(double r) {
  if (r <= 1.0 || r >= 2.0) return 0.0;
  double a = glue(2.0 - r), b = glue(r - 1.0);
  double ap = -glue1(2.0 - r), bp = glue1(r - 1.0);
  double s = a + b;
  return (ap * b - a * bp) / (s * s);
}

double BumpFunction::d2eta(double r) {
  if (r <= 1.0 || r >= 2.0) return 0.0;
  double a = glue(2.0 - r), b = glue(r - 1.0);
  double ap = -glue1(2.0 - r), bp = glue1(r - 1.0);
  double app = glue2(2.0 - r), bpp = glue2(r - 1.0);
  double s = a + b;
  double N = ap * b - a * bp, Np = app * b - a * bpp;
  return (Np * s - 2.0 * N * (ap + bp)) / (s * s * s);
}

double BumpFunction::value(const Vec& x) const { return eta(x.norm()); }

Vec BumpFunction::grad(const Vec& x) const {
  double r = x.norm();
  if (r <= 1.0 || r >= 2.0) return Vec::Zero(x.size());
  return (deta(r) / r) * x;
}

Mat BumpFunction::hess(const Vec& x) const {
  const auto n = x.size();
  double r = x.norm();
  if (r <= 1.0 || r >= 2.0) return Mat::Zero(n, n);
  Vec u = x / r;
  Mat P = u * u.transpose();
  return d2eta(r) * P + (deta(r) / r) * (Mat::Identity(n, n) - P);
}

BumpFunction::Audit BumpFunction::audit(int samples) {
  Audit a;
  for (int i = 0; i <= samples; ++i) {
    double r = 1.0 + static_cast<double>(i) / samples;
    a.grad_max = std::max(a.grad_max, std::abs(deta(r)));
    a.hess_max = std::max({a.hess_max, std::abs(d2eta(r)), std::abs(deta(r)) / r});
  }
  a.ok = a.grad_max <= kGradSup && a.hess_max <= kHessSup;
  return a;
}

nlohmann::json BumpFunction::constants_json() {
  Audit a = audit();
  return {{"profile", "eta(r) = f(2-r)/(f(2-r)+f(r-1)), f(t) = exp(-1/t)"},
          {"grad_sup", kGradSup},
          {"hess_sup", kHessSup},
          {"audit", {{"samples", 2'000'000}, {"grad_max", a.grad_max}, {"hess_max", a.hess_max}, {"ok", a.ok}}}};
}

// --------------------------------------------------------------------- PhiMap

PhiMap::PhiMap(const Vec& x0, const Vec& y0, double delta, BumpFunction bump)
    : x0_(x0), y0_(y0), d_(y0 - x0), delta_(delta), bump_(bump) {
  if (!(delta > 0.0)) throw Error(ErrorCode::HypothesisViolation, "delta must be positive", {{"delta", delta}});
  const double cap = std::min(1.0, 1.0 / std::sqrt(bump_.grad_sup));
  if (!(delta < cap))
    throw Error(ErrorCode::HypothesisViolation, "delta above the invertibility cap", {{"delta", delta}, {"cap", cap}});
  const double d3 = delta * delta * delta;
  if (d_.norm() > d3)
    throw Error(ErrorCode::HypothesisViolation, "displacement exceeds delta^3",
                {{"displacement", d_.norm()}, {"delta_cubed", d3}});
}

double PhiMap::phi(const Vec& x) const { return BumpFunction::eta((x - x0_).norm() / delta_); }

Vec PhiMap::grad_phi(const Vec& x) const { return bump_.grad((x - x0_) / delta_) / delta_; }

Vec PhiMap::forward(const Vec& x) const { return x - phi(x) * d_; }

Mat PhiMap::jacobian(const Vec& x) const {
  const auto n = x.size();
  return Mat::Identity(n, n) - d_ * grad_phi(x).transpose();
}

Mat PhiMap::jacobian_inverse(const Vec& x) const {
  const auto n = x.size();
  Vec g = grad_phi(x);
  double den = 1.0 - g.dot(d_);
  if (!(std::abs(den) > 1e-300)) throw Error(ErrorCode::HypothesisViolation, "singular D Phi");
  return Mat::Identity(n, n) + (d_ * g.transpose()) / den;
}

Mat PhiMap::jacobian_derivative(const Vec& x, int j) const {
  Mat H = bump_.hess((x - x0_) / delta_) / (delta_ * delta_);
  return -d_ * H.col(j).transpose();
}

Vec PhiMap::inverse(const Vec& y) const {
  Vec x = y;
  for (int k = 0; k < 200; ++k) {
    Vec next = y + phi(x) * d_;
    double step = (next - x).norm();
    x = next;
    if (step <= 1e-16 * (1.0 + y.norm())) break;
  }
  return x;
}

// ---------------------------------------------------------------- choose_delta

double c0_bound(const FieldStats& st, double delta, const BumpFunction& b) {
  double gd2 = b.grad_sup * delta * delta;
  return st.lip * delta * delta * delta + st.sup * gd2 / (1.0 - gd2);
}

double c1_bound(const FieldStats& st, double delta, const BumpFunction& b) {
  double gd2 = b.grad_sup * delta * delta;
  double q = 1.0 - gd2;
  double w = st.omega ? st.omega(delta * delta * delta) : 0.0;
  return w * (1.0 + gd2) / q + 2.0 * st.lip * gd2 / q + st.sup * b.hess_sup * delta / (q * q);
}

double choose_delta(const FieldStats& st, double eps, bool need_c1, const BumpFunction& b) {
  if (!(eps > 0.0)) throw Error(ErrorCode::HypothesisViolation, "epsilon must be positive");
  if (need_c1 && !st.omega) throw Error(ErrorCode::HypothesisViolation, "C1 mode needs a modulus of continuity");
  auto ok = [&](double d) { return c0_bound(st, d, b) < eps / 2.0 && (!need_c1 || c1_bound(st, d, b) < eps / 2.0); };
  const double cap = 0.999 * std::min(1.0, 1.0 / std::sqrt(b.grad_sup));
  const double floor = 1e-12;
  if (ok(cap)) return cap;
  if (!ok(floor))
    throw Error(ErrorCode::DegenerateBudget, "no admissible delta above 1e-12",
                {{"eps", eps}, {"sup", st.sup}, {"lip", st.lip}});
  double lo = floor, hi = cap;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  return lo;
}

FieldStats local_stats(const VectorField& V, const Vec& center, double R, bool need_c1, int n_samples,
                       std::uint64_t seed) {
  FieldStats st;
  const int d = V.dim();
  double sup = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    Vec x = halton_in_ball(seed * 1000003ULL + static_cast<std::uint64_t>(i), center, R);
    sup = std::max(sup, V(x).norm());
  }
  // The farthest boundary points along each axis.
  for (int k = 0; k < d; ++k)
    for (double sgn : {-1.0, 1.0}) {
      Vec x = center;
      x[k] += sgn * R;
      sup = std::max(sup, V(x).norm());
    }
  st.sup = std::min(V.sup_bound, 1.05 * sup);
  if (std::isfinite(V.lip_bound)) {
    st.lip = V.lip_bound;
  } else {
    Box b{center - Vec::Constant(d, R), center + Vec::Constant(d, R)};
    st.lip = 1.05 * estimate_norms(V, b, n_samples, seed).lip;
  }
  if (need_c1) {
    // Dyadic radii 2^0 .. 2^-40 on the unit ball around the anchor.
    constexpr int K = 41;
    std::vector<double> w(K, 0.0);
    const int pairs = std::max(64, n_samples / 8);
    for (int k = 0; k < K; ++k) {
      double r = std::ldexp(1.0, -k);
      for (int i = 0; i < pairs; ++i) {
        Vec x = halton_in_ball(seed * 7919ULL + static_cast<std::uint64_t>(i) + 1, center, 1.0);
        Vec u = halton_in_ball(seed * 104729ULL + static_cast<std::uint64_t>(i) + 1, Vec::Zero(d), 1.0);
        double un = u.norm();
        if (un == 0.0) continue;
        Vec y = x + (r / un) * u;
        w[k] = std::max(w[k], op_norm(V.jacobian(y) - V.jacobian(x)));
      }
    }
    // Upper envelope, nondecreasing in r.
    for (int k = K - 2; k >= 0; --k) w[k] = std::max(w[k], w[k + 1]);
    st.omega = [w](double r) {
      if (r <= 0.0) return w.back();
      int k = static_cast<int>(std::floor(-std::log2(r)));
      k = std::clamp(k, 0, K - 1);
      return r > 1.0 ? w[0] * r : w[k];
    };
    st.omega_certified = V.has_jacobian() && V.provenance != Provenance::sampled_grid;
  }
  return st;
}

VectorField pushforward_field(const VectorField& V, const PhiMap& map, const std::string& name) {
  auto Vf = V.eval_fn();
  const Vec x0 = map.x0();
  const double r2 = 2.0 * map.delta();
  PhiMap m = map;
  auto f = [Vf, m, x0, r2](const Vec& y) -> Vec {
    if ((y - x0).norm() >= r2) return Vf(y);
    return m.jacobian_inverse(y) * Vf(m.forward(y));
  };
  const double gd2 = map.bump().grad_sup * map.delta() * map.delta();
  const double sup = V.sup_bound / (1.0 - gd2);
  const double lip = V.lip_bound * (1.0 + gd2) / ((1.0 - gd2) * (1.0 - gd2)) +
                     V.sup_bound * map.bump().hess_sup * map.delta() / ((1.0 - gd2) * (1.0 - gd2));
  VectorField W(V.dim(), f, nullptr, map.identity() ? V.sup_bound : sup, map.identity() ? V.lip_bound : lip,
                Provenance::pushforward, name);
  W.period = V.period;
  W.potential = nullptr;
  W.transport = [m, x0, r2](const Vec& y) -> Mat {
    const auto n = y.size();
    if ((y - x0).norm() >= r2) return Mat::Identity(n, n);
    return m.jacobian_inverse(y);
  };
  W.chart = [m, x0, r2](const Vec& y) -> Vec {
    if ((y - x0).norm() >= r2) return y;
    return m.forward(y);
  };
  return W;
}

// ----------------------------------------------------------------- audits

nlohmann::json PhiAudit::to_json() const {
  return {{"samples", samples},
          {"displacement_max", displacement_max},
          {"displacement_bound", displacement_bound},
          {"jac_dev_max", jac_dev_max},
          {"jac_dev_bound", jac_dev_bound},
          {"jac_deriv_max", jac_deriv_max},
          {"jac_deriv_bound", jac_deriv_bound},
          {"field_sup_dev", field_sup_dev},
          {"field_lip_dev", field_lip_dev},
          {"inverse_err", inverse_err},
          {"violations", violations}};
}

PhiAudit audit_phi(const VectorField& V, const VectorField& Vt, const PhiMap& map, int n, std::uint64_t seed) {
  PhiAudit a;
  a.samples = n;
  const double dl = map.delta();
  const double g = map.bump().grad_sup, hs = map.bump().hess_sup;
  a.displacement_bound = dl * dl * dl;
  a.jac_dev_bound = g * dl * dl;
  a.jac_deriv_bound = hs * dl;
  const int d = V.dim();
  const double h = 1e-4 * dl;
  for (int i = 0; i < n; ++i) {
    // 2.2 delta covers the support with a margin outside it.
    Vec y = halton_in_ball(seed * 1000003ULL + static_cast<std::uint64_t>(i) + 1, map.x0(), 2.2 * dl);
    double disp = (y - map.forward(y)).norm();
    double jd = op_norm(map.jacobian(y) - Mat::Identity(d, d));
    double jdd = 0.0;
    for (int j = 0; j < d; ++j) jdd = std::max(jdd, op_norm(map.jacobian_derivative(y, j)));
    a.displacement_max = std::max(a.displacement_max, disp);
    a.jac_dev_max = std::max(a.jac_dev_max, jd);
    a.jac_deriv_max = std::max(a.jac_deriv_max, jdd);
    if (disp > a.displacement_bound) ++a.violations;
    if (jd > a.jac_dev_bound * (1.0 + 1e-12)) ++a.violations;
    if (jdd > a.jac_deriv_bound * (1.0 + 1e-12)) ++a.violations;
    a.field_sup_dev = std::max(a.field_sup_dev, (V(y) - Vt(y)).norm());
    Mat D(d, d);
    for (int j = 0; j < d; ++j) {
      Vec e = Vec::Zero(d);
      e[j] = h;
      D.col(j) = ((V(y + e) - Vt(y + e)) - (V(y - e) - Vt(y - e))) / (2.0 * h);
    }
    a.field_lip_dev = std::max(a.field_lip_dev, op_norm(D));
    a.inverse_err = std::max(a.inverse_err, (map.inverse(map.forward(y)) - y).norm());
  }
  return a;
}

nlohmann::json CorrectStartResult::to_json() const {
  return {{"delta", delta},
          {"delta_cubed", delta * delta * delta},
          {"x0", vec_json(map.x0())},
          {"y0", vec_json(map.y0())},
          {"c0_bound", c0},
          {"c1_bound", c1},
          {"c1_label", c1_certified ? "certified" : "estimated"},
          {"coincidence_error", coincidence_error},
          {"sup_dev", sup_dev},
          {"lip_dev", lip_dev}};
}

CorrectStartResult correct_start(const VectorField& V, const Trajectory& traj, const Vec& y0, double eps,
                                 Direction dir, bool need_c1, const Settings& s, double stats_radius) {
  if (traj.size() < 2) throw Error(ErrorCode::HypothesisViolation, "correct_start needs a trajectory with positive span");
  const bool fwd = dir == Direction::forward;
  const Vec anchor = fwd ? traj.states().front() : traj.states().back();
  FieldStats st = local_stats(V, anchor, stats_radius, need_c1);
  const double delta = choose_delta(st, eps, need_c1);
  const double d3 = delta * delta * delta;
  const double dist = (y0 - anchor).norm();
  if (dist > d3)
    throw Error(ErrorCode::HypothesisViolation, "new endpoint farther than delta^3 from the anchor",
                {{"distance", dist}, {"required", d3}, {"delta", delta}});
  PhiMap map(anchor, y0, delta);
  VectorField Vt = pushforward_field(V, map);
  Trajectory y(V.dim());
  const double t0 = traj.t0(), t1 = traj.t1();
  if (fwd) {
    y = integrate(Vt, y0, t0, t1, s);
  } else {
    auto f = Vt.eval_fn();
    VectorField rev(V.dim(), [f](const Vec& x) { return Vec(-f(x)); }, nullptr, Vt.sup_bound, Vt.lip_bound,
                    Provenance::pushforward);
    rev.period = Vt.period;
    Trajectory r = integrate(rev, y0, 0.0, t1 - t0, s);
    const auto& ts = r.times();
    for (size_t i = ts.size(); i-- > 0;) {
      y.push(t1 - ts[i], r.states()[i], -r.slopes()[i]);
    }
    y.tol_budget = r.tol_budget;
  }
  CorrectStartResult out{Vt, y, map, delta, c0_bound(st, delta), need_c1 ? c1_bound(st, delta) : 0.0};
  out.c1_certified = need_c1 && st.omega_certified;
  for (size_t i = 0; i < y.size(); ++i) {
    const Vec& yi = y.states()[i];
    if ((yi - anchor).norm() < 2.0 * delta) continue;
    out.coincidence_error = std::max(out.coincidence_error, (yi - traj.state_at(y.times()[i])).norm());
  }
  PhiAudit a = audit_phi(V, Vt, map, 2000, 1);
  out.sup_dev = a.field_sup_dev;
  out.lip_dev = a.field_lip_dev;
  if (!(out.sup_dev < eps) || (need_c1 && !(out.sup_dev + out.lip_dev < eps)))
    throw Error(ErrorCode::BudgetExceeded, "sampled field deviation not below epsilon",
                {{"sup_dev", out.sup_dev}, {"lip_dev", out.lip_dev}, {"eps", eps}});
  return out;
}

}  // namespace steerkit
