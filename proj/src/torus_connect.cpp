#include "steerkit/torus_connect.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <thread>

#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"

namespace steerkit {

using nlohmann::json;

double torus_distance(const Vec& a, const Vec& b, double period) { return torus_diff(a, b, period).norm(); }

json Transit::to_json() const {
  return {{"x1", vec_json(x1)},   {"x2", vec_json(x2)},         {"T", T},
          {"miss_start", miss_start}, {"miss_end", miss_end}, {"candidate", candidate},
          {"refinements", refinements}, {"steps", steps}};
}

namespace {

// Walks the lattice cells c + P k (cubes of side P centred on the images of c)
// crossed by the chord a -> b. For every cell, cb(center, s, dist) receives the
// chord parameter of closest approach to its centre and that distance. Any
// centre the chord passes within P/2 of is visited.
template <class F>
void walk_chord(const Vec& a, const Vec& b, const Vec& c, double P, F&& cb) {
  const int d = static_cast<int>(a.size());
  const Vec dir = b - a;
  std::array<long, 4> k{};
  std::array<double, 4> tmax{}, tdelta{};
  std::array<int, 4> stp{};
  for (int i = 0; i < d; ++i) {
    const double u = (a[i] - c[i]) / P + 0.5;
    k[i] = static_cast<long>(std::floor(u));
    const double frac = u - static_cast<double>(k[i]);
    if (dir[i] > 0.0) {
      stp[i] = 1;
      tmax[i] = (1.0 - frac) * P / dir[i];
      tdelta[i] = P / dir[i];
    } else if (dir[i] < 0.0) {
      stp[i] = -1;
      tmax[i] = frac * P / -dir[i];
      tdelta[i] = P / -dir[i];
    } else {
      tmax[i] = kInf;
    }
  }
  const double len2 = dir.squaredNorm();
  Vec center(d);
  for (;;) {
    for (int i = 0; i < d; ++i) center[i] = c[i] + P * static_cast<double>(k[i]);
    const double s = len2 > 0.0 ? std::clamp((center - a).dot(dir) / len2, 0.0, 1.0) : 0.0;
    cb(center, s, (a + s * dir - center).norm());
    int m = 0;
    for (int i = 1; i < d; ++i)
      if (tmax[i] < tmax[m]) m = i;
    if (!(tmax[m] <= 1.0)) break;
    k[m] += stp[m];
    tmax[m] += tdelta[m];
  }
}

// Closest approach to `center` inside the last accepted step, in step-local
// time so the result does not inherit the resolution of large absolute times.
struct Approach {
  double sigma = 0.0, dist = kInf;
  Vec x;  // unwrapped, continuous with x_prev
};

Approach refine_in_step(const Stepper& k, const VectorField::EvalFn& f, const Vec& center) {
  const double h = k.t() - k.t_prev();
  auto at = [&](double s) { return s == 0.0 ? k.x_prev() : k.raw_step(k.t_prev(), k.x_prev(), k.f_prev(), s, nullptr, nullptr); };
  auto D = [&](double s) {
    Vec y = at(s);
    return (y - center).dot(f(y));
  };
  double lo = 0.0, hi = h;
  Approach out;
  if (D(lo) < 0.0 && D(hi) > 0.0) {
    for (int i = 0; i < 200 && hi - lo > 1e-16 * h; ++i) {
      double m = 0.5 * (lo + hi);
      if (m <= lo || m >= hi) break;
      (D(m) < 0.0 ? lo : hi) = m;
    }
    out.sigma = 0.5 * (lo + hi);
  } else {
    // Monotone distance over the step: the nearer end wins.
    out.sigma = (at(lo) - center).norm() <= (at(hi) - center).norm() ? lo : hi;
  }
  out.x = at(out.sigma);
  out.dist = (out.x - center).norm();
  return out;
}

Settings torus_settings(const VectorField& V, Settings s, double path_max) {
  s.period = V.period;
  s.step_limit = [path_max](double, const Vec&, const Vec& f, double h) {
    const double n = f.norm();
    return n > 0.0 ? std::min(h, path_max / n) : h;
  };
  return s;
}

// Stride-doubling sampler for long runs.
struct Thinner {
  size_t cap, stride = 1, count = 0;
  std::vector<double> t;
  std::vector<Vec> x, f;
  explicit Thinner(size_t c) : cap(std::max<size_t>(c, 4)) {}
  void add(double tt, const Vec& xx, const Vec& ff, bool force = false) {
    if (force || count++ % stride == 0) {
      if (!t.empty() && !(tt > t.back())) return;
      t.push_back(tt);
      x.push_back(xx);
      f.push_back(ff);
    }
    if (t.size() >= 2 * cap) {
      size_t j = 0;
      for (size_t i = 0; i < t.size(); i += 2, ++j) {
        t[j] = t[i];
        x[j] = x[i];
        f[j] = f[i];
      }
      t.resize(j);
      x.resize(j);
      f.resize(j);
      stride *= 2;
    }
  }
  Trajectory build() const {
    Trajectory tr(x.empty() ? 0 : static_cast<int>(x.front().size()));
    for (size_t i = 0; i < t.size(); ++i) tr.push(t[i], x[i], f[i]);
    return tr;
  }
};

struct Event {
  bool any = false;
  double T = 0.0, dist = kInf;
  Vec x_unwrapped, center;
};

// Integrates V from x0 and reports the first closest approach to q closer than
// capture, or nothing by T_end.
class Scanner {
 public:
  Scanner(const VectorField& V, const Vec& x0, const Vec& q, double capture, const Settings& s, Thinner* keep)
      : f_(V.eval_fn()), q_(q), P_(*V.period), capture_(capture), keep_(keep), st_(autonomous(V), s, 0.0, x0) {
    if (keep_) keep_->add(0.0, st_.x(), st_.f(), true);
  }

  Event next(double T_end, double t_from = 0.0) {
    Event ev;
    st_.advance(T_end, [&](const Stepper& k) {
      if (keep_) keep_->add(k.t(), k.x(), k.f());
      if (k.t() < t_from) return true;
      walk_chord(k.x_prev(), k.x_end_unwrapped(), q_, P_, [&](const Vec& c, double s, double dist) {
        if (dist < best_) {
          best_ = dist;
          best_T_ = k.t_prev() + s * (k.t() - k.t_prev());
        }
        if (dist >= capture_ || s <= 0.0 || s >= 1.0) return;
        Approach a = refine_in_step(k, f_, c);
        const double T = k.t_prev() + a.sigma;
        if (a.dist < best_) {
          best_ = a.dist;
          best_T_ = T;
        }
        if (a.dist < capture_ && T >= t_from && (!ev.any || a.dist < ev.dist)) {
          ev.any = true;
          ev.T = T;
          ev.dist = a.dist;
          ev.x_unwrapped = a.x;
          ev.center = c;
        }
      });
      return !ev.any;
    });
    return ev;
  }

  double t() const { return st_.t(); }
  long steps() const { return st_.steps(); }
  double best() const { return best_; }
  double best_T() const { return best_T_; }

 private:
  VectorField::EvalFn f_;
  Vec q_;
  double P_, capture_;
  Thinner* keep_;
  Stepper st_;
  double best_ = kInf, best_T_ = 0.0;
};

struct CandidateOutcome {
  bool found = false;
  Transit tr;
  double best = kInf, best_T = 0.0;
  Vec start;
};

CandidateOutcome run_candidate(const VectorField& V, const Vec& p, const Vec& q, double r, const Vec& x1,
                               const TransitOptions& opt, const Settings& s) {
  CandidateOutcome out;
  out.start = x1;
  const double P = *V.period;
  Thinner keep(opt.keep_points);
  Scanner sc(V, x1, q, 2.0 * r, s, &keep);
  int refinements = 0;
  auto finish = [&](const Vec& start, const Event& ev, Thinner& th, long steps) {
    out.found = true;
    out.tr.x1 = torus_wrap(start, P);
    out.tr.x2 = torus_wrap(ev.x_unwrapped, P);
    out.tr.T = ev.T;
    out.tr.miss_start = torus_distance(start, p, P);
    out.tr.miss_end = ev.dist;
    out.tr.refinements = refinements;
    out.tr.steps = steps;
    th.add(ev.T, out.tr.x2, V(out.tr.x2), true);
    out.tr.traj = th.build();
  };
  for (;;) {
    Event ev = sc.next(opt.T_max);
    out.best = sc.best();
    out.best_T = sc.best_T();
    if (!ev.any) return out;
    if (ev.dist <= r) {
      finish(x1, ev, keep, sc.steps());
      return out;
    }
    if (refinements >= opt.max_refinements) continue;
    // Near miss: shift the start against the miss vector, staying inside
    // B_r(p), and re-run up to just past the approach.
    ++refinements;
    const Vec dhat = (ev.x_unwrapped - ev.center) / ev.dist;
    double shift = ev.dist - 0.5 * r;
    Vec x1s = x1 - shift * dhat;
    for (int i = 0; i < 60 && torus_distance(x1s, p, P) >= 0.999 * r; ++i) {
      shift *= 0.95;
      x1s = x1 - shift * dhat;
    }
    if (torus_distance(x1s, p, P) >= r) continue;
    Thinner keep2(opt.keep_points);
    Scanner again(V, x1s, q, 2.0 * r, s, &keep2);
    Event e2 = again.next(ev.T + 1.0, ev.T - 1.0);
    if (e2.any && e2.dist <= r) {
      finish(x1s, e2, keep2, again.steps());
      return out;
    }
  }
}

}  // namespace

Transit find_transit(const VectorField& V, const Vec& p, const Vec& q, double delta, const TransitOptions& opt) {
  if (!V.period) throw Error(ErrorCode::ConfigError, "transit search needs a torus field (period)");
  if (!(delta > 0.0)) throw Error(ErrorCode::HypothesisViolation, "delta must be positive", {{"delta", delta}});
  const double P = *V.period;
  const double r = 0.5 * delta * delta * delta;
  const Settings s = torus_settings(V, opt.settings, opt.path_max);
  const Vec pw = torus_wrap(p, P), qw = torus_wrap(q, P);
  std::vector<Vec> starts;
  for (int k = 0; k < opt.n_candidates; ++k)
    starts.push_back(k == 0 ? pw : halton_in_ball(1 + opt.seed * 100003ULL + static_cast<std::uint64_t>(k), pw, r));

  int threads = opt.threads > 0 ? opt.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::max(1, std::min(threads, opt.n_candidates));
  std::vector<CandidateOutcome> res(starts.size());
  // Batches in candidate order; the lowest successful index wins.
  for (size_t b = 0; b < starts.size(); b += threads) {
    const size_t e = std::min(starts.size(), b + threads);
    if (e - b == 1) {
      res[b] = run_candidate(V, pw, qw, r, starts[b], opt, s);
    } else {
      std::vector<std::thread> pool;
      for (size_t i = b; i < e; ++i)
        pool.emplace_back([&, i] { res[i] = run_candidate(V, pw, qw, r, starts[i], opt, s); });
      for (auto& t : pool) t.join();
    }
    for (size_t i = b; i < e; ++i)
      if (res[i].found) {
        res[i].tr.candidate = static_cast<int>(i);
        return res[i].tr;
      }
  }
  size_t bi = 0;
  for (size_t i = 1; i < res.size(); ++i)
    if (res[i].best < res[bi].best) bi = i;
  throw Error(ErrorCode::NoTransitFound, "no orbit from near p reached q within T_max",
              {{"closest_approach", num_json(res.empty() ? kInf : res[bi].best)},
               {"closest_time", res.empty() ? 0.0 : res[bi].best_T},
               {"candidate", bi},
               {"radius", r},
               {"T_max", opt.T_max}});
}

ConnectResult connect(const VectorField& V, const Vec& p, const Vec& q, double eps, const ConnectOptions& opt) {
  if (!V.period) throw Error(ErrorCode::ConfigError, "torus connection needs a torus field (period)");
  if (!(eps > 0.0)) throw Error(ErrorCode::HypothesisViolation, "epsilon must be positive", {{"eps", eps}});
  const double P = *V.period;
  const int d = V.dim();
  const Vec pw = torus_wrap(p, P), qw = torus_wrap(q, P);

  double delta;
  if (opt.delta) {
    delta = *opt.delta;
  } else {
    FieldStats st = local_stats(V, pw, opt.stats_radius, true);
    delta = choose_delta(st, eps / 2.0, true);
  }

  ConnectResult R;
  for (int shrink = 0;; ++shrink) {
    R.transit = find_transit(V, pw, qw, delta, opt.transit);
    if (torus_distance(R.transit.x1, R.transit.x2, P) >= 4.0 * delta) break;
    if (shrink >= opt.max_shrink)
      throw Error(ErrorCode::SupportOverlap, "correction balls around the transit ends overlap",
                  {{"delta", delta}, {"distance", torus_distance(R.transit.x1, R.transit.x2, P)}});
    delta *= 0.5;
  }
  R.delta = delta;
  const Vec x1 = R.transit.x1, x2 = R.transit.x2;
  // Local (unwrapped) representatives of p and q next to the transit ends.
  const PhiMap map_p(x1, x1 + torus_diff(pw, x1, P), delta);
  const PhiMap map_q(x2, x2 + torus_diff(qw, x2, P), delta);
  const VectorField Fp = pushforward_field(V, map_p, "torus_p");
  const VectorField Fq = pushforward_field(V, map_q, "torus_q");

  R.audit_p = audit_phi(V, Fp, map_p, opt.audit_samples, opt.seed);
  R.audit_q = audit_phi(V, Fq, map_q, opt.audit_samples, opt.seed + 1);
  R.sup_dev = std::max(R.audit_p.field_sup_dev, R.audit_q.field_sup_dev);
  R.lip_dev = std::max(R.audit_p.field_lip_dev, R.audit_q.field_lip_dev);

  auto Vf = V.eval_fn();
  auto Fpf = Fp.eval_fn(), Fqf = Fq.eval_fn();
  const double two_delta = 2.0 * delta;
  VectorField Vt(
      d,
      [=](const Vec& y) {
        Vec v1 = torus_diff(y, x1, P);
        if (v1.norm() < two_delta) return Fpf(x1 + v1);
        Vec v2 = torus_diff(y, x2, P);
        if (v2.norm() < two_delta) return Fqf(x2 + v2);
        return Vf(y);
      },
      nullptr, V.sup_bound + R.sup_dev * 1.05, V.lip_bound + R.lip_dev * 1.05, Provenance::pushforward,
      V.name + "~torus");
  Vt.period = P;

  // Exterior samples must evaluate bitwise like V.
  R.exterior_bitwise = true;
  for (int i = 0; R.exterior_checked < opt.exterior_samples && i < 100 * opt.exterior_samples; ++i) {
    Vec y = P * halton_point(1 + opt.seed * 7919ULL + static_cast<std::uint64_t>(i), d);
    if (torus_distance(y, x1, P) < two_delta || torus_distance(y, x2, P) < two_delta) continue;
    ++R.exterior_checked;
    Vec a = Vt(y), b = V(y);
    for (int j = 0; j < d; ++j)
      if (!(a[j] == b[j])) R.exterior_bitwise = false;
  }

  // Divergence inside the balls, compared with V's.
  for (int i = 0; i < 200; ++i) {
    for (const PhiMap* m : {&map_p, &map_q}) {
      Vec y = halton_in_ball(1 + static_cast<std::uint64_t>(i), m->x0(), 2.0 * delta);
      double dv = std::abs(estimate_divergence(Vt, y, 1e-3 * delta)) - std::abs(estimate_divergence(V, y, 1e-3 * delta));
      R.div_drift = std::max(R.div_drift, dv);
    }
  }

  // Glued run from p with steps that stop at the guard spheres around both balls.
  const double guard = 2.5 * delta;
  Settings s = opt.verify;
  s.period = P;
  const double path_max = opt.transit.path_max;
  s.step_limit = [=](double, const Vec& x, const Vec& f, double h) {
    const double n = f.norm();
    if (!(n > 0.0)) return h;
    h = std::min(h, path_max / n);
    const double inside_h = 0.5 * delta / n;
    double s_in = kInf;
    for (const Vec* c : {&x1, &x2}) {
      if (torus_distance(x, *c, P) < guard) return std::min(h, inside_h);
      const Vec b = x + h * f;
      const double len = h * n;
      walk_chord(x, b, *c, P, [&](const Vec&, double sc, double dist) {
        if (dist < guard) s_in = std::min(s_in, sc - std::sqrt(guard * guard - dist * dist) / len);
      });
    }
    if (s_in < kInf) return std::min(h, std::max(s_in * h * (1.0 - 1e-9), inside_h));
    return h;
  };
  const double T = R.transit.T;
  const int nc = std::max(1, opt.checkpoints);
  std::vector<double> tc;
  for (int i = 1; i <= nc; ++i) tc.push_back(T * i / (nc + 1));

  Thinner keep(opt.transit.keep_points);
  Stepper st(autonomous(Vt), s, 0.0, pw);
  keep.add(0.0, st.x(), st.f(), true);
  std::vector<Vec> glued_cp;
  double closest = kInf;
  auto obs = [&](const Stepper& k) {
    keep.add(k.t(), k.x(), k.f());
    if (k.t() > T - 1.0) {
      walk_chord(k.x_prev(), k.x_end_unwrapped(), qw, P, [&](const Vec& c, double, double dist) {
        if (dist > 1e-3) return;
        closest = std::min(closest, refine_in_step(k, Vt.eval_fn(), c).dist);
      });
    }
    return true;
  };
  for (double t : tc) {
    st.advance(t, obs);
    glued_cp.push_back(st.x());
  }
  st.advance(T, obs);
  const Vec yT = st.x();
  const double budget_glued = st.error_budget();
  keep.add(T, yT, st.f(), true);
  R.terminal_error = torus_distance(yT, qw, P);
  st.advance(T + 1.0, obs);
  R.closest_approach = std::min(closest, R.terminal_error);
  R.traj = keep.build();

  // Gluing: between the balls the glued path is the transit itself.
  {
    Settings sv = torus_settings(V, opt.verify, path_max);
    Stepper sp(autonomous(V), sv, 0.0, x1);
    double dev = 0.0;
    for (size_t i = 0; i < tc.size(); ++i) {
      sp.advance(tc[i]);
      const Vec& g = glued_cp[i];
      if (torus_distance(g, x1, P) < guard || torus_distance(g, x2, P) < guard) continue;
      dev = std::max(dev, torus_distance(g, sp.x(), P));
    }
    R.gluing_deviation = dev;
    // Integrator error estimates plus rounding of O(1e-16) per unit of path.
    R.gluing_allowance = 10.0 * (budget_glued + sp.error_budget()) + 1e-14 * T * std::max(V.sup_bound, 1.0);
  }

  R.field = Vt;
  const bool pass = R.lip_dev < eps && R.exterior_bitwise && R.audit_p.violations == 0 && R.audit_q.violations == 0 &&
                    R.closest_approach < 1e-6;
  R.certificate = {
      {"pass", pass},
      {"p", vec_json(pw)},
      {"q", vec_json(qw)},
      {"epsilon", eps},
      {"period", P},
      {"delta", delta},
      {"transit", R.transit.to_json()},
      {"terminal_error", R.terminal_error},
      {"closest_approach", R.closest_approach},
      {"sup_dev", R.sup_dev},
      {"lip_dev", R.lip_dev},
      {"lip_dev_below_eps", R.lip_dev < eps},
      {"audit_p", R.audit_p.to_json()},
      {"audit_q", R.audit_q.to_json()},
      {"exterior", {{"bitwise_equal", R.exterior_bitwise}, {"samples", R.exterior_checked}}},
      {"div_drift", R.div_drift},
      {"gluing", {{"deviation", R.gluing_deviation}, {"allowance", R.gluing_allowance}}},
  };
  return R;
}

}  // namespace steerkit
