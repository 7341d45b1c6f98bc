#include "steerkit/recurrence.hpp"

#include <algorithm>
#include <cmath>

#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"

namespace steerkit {

nlohmann::json RecurrenceResult::to_json() const {
  return {{"point", vec_json(point)},
          {"T", return_time},
          {"error", return_error},
          {"direction", direction == TimeDirection::forward ? "forward" : "backward"},
          {"candidate", candidate}};
}

RecurrenceResult RecurrenceResult::from_json(const nlohmann::json& j) {
  RecurrenceResult r;
  r.point = vec_from(j.at("point"));
  r.return_time = j.at("T").get<double>();
  r.return_error = j.at("error").get<double>();
  r.direction = j.at("direction").get<std::string>() == "backward" ? TimeDirection::backward : TimeDirection::forward;
  r.candidate = j.value("candidate", 0);
  return r;
}

namespace {

struct Scan {
  bool found = false;
  double T = 0.0, err = kInf;
  double best_miss = kInf, best_T = 0.0;
};

// Bisection for the sign change of g on [a, b] with g(a) < 0 <= g(b).
template <class G>
double bisect(G g, double a, double b, double tol) {
  for (int i = 0; i < 200 && b - a > tol; ++i) {
    double m = 0.5 * (a + b);
    (g(m) < 0.0 ? a : b) = m;
  }
  return 0.5 * (a + b);
}

Scan scan_returns(const Rhs& rhs, const Settings& s, const Vec& xp, double T_min, double T_max, double radius) {
  Scan out;
  Stepper st(rhs, s, 0.0, xp);
  if (st.f().norm() == 0.0) {
    // Equilibria return trivially.
    out.found = true;
    out.T = std::max(T_min, 0.0);
    out.err = 0.0;
    out.best_miss = 0.0;
    return out;
  }
  double prev = 0.0;
  const double near = std::max(10.0 * radius, 1e-3);
  st.advance(T_max, [&](const Stepper& k) {
    const double D = (k.x() - xp).dot(k.f());
    if (k.t() >= T_min) {
      double dist = (k.x() - xp).norm();
      if (dist < out.best_miss) {
        out.best_miss = dist;
        out.best_T = k.t();
      }
    }
    if (prev < 0.0 && D >= 0.0 && k.t() >= T_min) {
      auto gh = [&](double t) { return (k.dense(t) - xp).dot(k.dense_derivative(t)); };
      double tm = bisect(gh, k.t_prev(), k.t(), 1e-10);
      if ((k.dense(tm) - xp).norm() <= near) {
        auto ge = [&](double t) {
          Vec x = k.exact_at(t);
          return (x - xp).dot(rhs(t, x));
        };
        tm = bisect(ge, k.t_prev(), k.t(), 1e-12 * std::max(1.0, k.t()));
      }
      double err = (k.exact_at(tm) - xp).norm();
      if (tm >= T_min && err < out.best_miss) {
        out.best_miss = err;
        out.best_T = tm;
      }
      if (tm >= T_min && err <= radius) {
        out.found = true;
        out.T = tm;
        out.err = err;
        return false;
      }
    }
    prev = D;
    return true;
  });
  return out;
}

Rhs directed(const VectorField& V, TimeDirection dir) {
  auto f = V.eval_fn();
  if (dir == TimeDirection::forward) return [f](double, const Vec& x) { return f(x); };
  return [f](double, const Vec& x) { return Vec(-f(x)); };
}

}  // namespace

RecurrenceResult find_poisson_stable(const VectorField& V, const Vec& center, double delta, double return_radius,
                                     double T_min, double T_max, const RecurrenceOptions& opt) {
  if (!(delta > 0.0) || !(return_radius > 0.0) || !(T_min < T_max))
    throw Error(ErrorCode::HypothesisViolation, "recurrence search needs delta > 0, radius > 0, T_min < T_max",
                {{"delta", delta}, {"radius", return_radius}, {"T_min", T_min}, {"T_max", T_max}});
  Rhs rhs = directed(V, opt.direction);
  double best = kInf, best_T = 0.0;
  Vec best_point = center;
  for (int k = 0; k < opt.n_candidates; ++k) {
    std::uint64_t idx = (opt.include_center && k == 0) ? 0 : 1 + opt.seed * 100003ULL + static_cast<std::uint64_t>(k);
    Vec xp = halton_in_ball(idx, center, delta);
    Scan sc = scan_returns(rhs, opt.settings, xp, T_min, T_max, return_radius);
    if (sc.found) {
      RecurrenceResult r;
      r.point = xp;
      r.return_time = sc.T;
      r.return_error = sc.err;
      r.direction = opt.direction;
      r.candidate = k;
      return r;
    }
    if (sc.best_miss < best) {
      best = sc.best_miss;
      best_T = sc.best_T;
      best_point = xp;
    }
  }
  throw Error(ErrorCode::NoReturnFound, "no candidate returned within T_max",
              {{"best_miss", num_json(best)},
               {"best_time", best_T},
               {"best_candidate", vec_json(best_point)},
               {"T_max", T_max},
               {"radius", return_radius}});
}

std::vector<double> near_returns(const Trajectory& traj, const Vec& xp, double radius) {
  std::vector<double> out;
  const auto& ts = traj.times();
  const auto& xs = traj.states();
  const auto& fs = traj.slopes();
  for (size_t i = 0; i + 1 < ts.size(); ++i) {
    double D0 = (xs[i] - xp).dot(fs[i]);
    double D1 = (xs[i + 1] - xp).dot(fs[i + 1]);
    if (!(D0 < 0.0 && D1 >= 0.0)) continue;
    auto g = [&](double t) { return (traj.at(t) - xp).dot(traj.derivative_at(t)); };
    double tm = bisect(g, ts[i], ts[i + 1], 1e-10);
    if (traj.context) {
      auto ge = [&](double t) {
        Vec x = traj.state_at(t);
        return (x - xp).dot(traj.context->rhs(t, x));
      };
      tm = bisect(ge, ts[i], ts[i + 1], 1e-12 * std::max(1.0, ts[i + 1]));
    }
    if ((traj.state_at(tm) - xp).norm() <= radius) out.push_back(tm);
  }
  return out;
}

double nonwandering_fraction(const VectorField& V, const Box& box, int n_points, double radius, double T_max,
                             std::uint64_t seed, const Settings& s) {
  if (n_points <= 0) return 0.0;
  Rhs rhs = directed(V, TimeDirection::forward);
  const int d = V.dim();
  int hits = 0;
  for (int i = 0; i < n_points; ++i) {
    Vec u = halton_point(1 + seed * 100003ULL + static_cast<std::uint64_t>(i), d);
    Vec x = box.lo + u.cwiseProduct(box.hi - box.lo);
    if (scan_returns(rhs, s, x, 0.0, T_max, radius).found) ++hits;
  }
  return static_cast<double>(hits) / n_points;
}

}  // namespace steerkit
