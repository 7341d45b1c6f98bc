#include "steerkit/control.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"

namespace steerkit {

using nlohmann::json;

void FieldRegistry::add(const std::string& id, VectorField f) {
  fields_[id] = std::make_shared<const VectorField>(std::move(f));
}

const VectorField& FieldRegistry::get(const std::string& id) const {
  auto it = fields_.find(id);
  if (it == fields_.end()) throw Error(ErrorCode::ConfigError, "control refers to unknown field '" + id + "'");
  return *it->second;
}

std::vector<std::string> FieldRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : fields_) out.push_back(k);
  return out;
}

const char* kind_name(SegmentKind k) {
  switch (k) {
    case SegmentKind::zero: return "zero";
    case SegmentKind::constant: return "constant";
    case SegmentKind::steer: return "steer";
    case SegmentKind::field_difference: return "field_difference";
  }
  return "zero";
}

static SegmentKind kind_from(const std::string& s) {
  if (s == "zero") return SegmentKind::zero;
  if (s == "constant") return SegmentKind::constant;
  if (s == "steer") return SegmentKind::steer;
  if (s == "field_difference") return SegmentKind::field_difference;
  throw Error(ErrorCode::ConfigError, "unknown control kind '" + s + "'");
}

Descriptor Descriptor::constant(const Vec& alpha) {
  Descriptor d;
  d.kind = SegmentKind::constant;
  d.alpha = alpha;
  return d;
}

Descriptor Descriptor::field_difference(const std::string& a, const std::string& b, Descriptor inner, double bound) {
  Descriptor d;
  d.kind = SegmentKind::field_difference;
  d.a = a;
  d.b = b;
  d.inner = std::make_shared<Descriptor>(std::move(inner));
  d.bound = bound;
  return d;
}

double Descriptor::analytic_bound() const {
  switch (kind) {
    case SegmentKind::zero: return 0.0;
    case SegmentKind::constant: return alpha.norm();
    case SegmentKind::steer: return bound;
    case SegmentKind::field_difference: return bound + (inner ? inner->analytic_bound() : 0.0);
  }
  return 0.0;
}

json Descriptor::to_json() const {
  json p = json::object();
  switch (kind) {
    case SegmentKind::zero: break;
    case SegmentKind::constant: p["alpha"] = vec_json(alpha); break;
    case SegmentKind::steer:
      p["z"] = vec_json(z);
      p["alpha"] = vec_json(alpha);
      p["s"] = s;
      p["tau"] = tau;
      p["x_start"] = vec_json(x_start);
      p["base"] = base;
      p["gain"] = gain;
      p["bound"] = num_json(bound);
      break;
    case SegmentKind::field_difference:
      p["a"] = a;
      p["b"] = b;
      p["inner"] = inner ? inner->to_json() : Descriptor::zero().to_json();
      p["bound"] = num_json(bound);
      break;
  }
  return {{"kind", kind_name(kind)}, {"params", p}};
}

Descriptor Descriptor::from_json(const json& j) {
  Descriptor d;
  d.kind = kind_from(j.at("kind").get<std::string>());
  const json& p = j.contains("params") ? j.at("params") : json::object();
  switch (d.kind) {
    case SegmentKind::zero: break;
    case SegmentKind::constant: d.alpha = vec_from(p.at("alpha")); break;
    case SegmentKind::steer:
      d.z = vec_from(p.at("z"));
      d.alpha = vec_from(p.at("alpha"));
      d.s = p.at("s").get<double>();
      d.tau = p.at("tau").get<double>();
      d.x_start = vec_from(p.at("x_start"));
      d.base = p.at("base").get<std::string>();
      d.gain = p.value("gain", 0.0);
      d.bound = num_from(p.at("bound"));
      break;
    case SegmentKind::field_difference:
      d.a = p.at("a").get<std::string>();
      d.b = p.at("b").get<std::string>();
      d.inner = std::make_shared<Descriptor>(Descriptor::from_json(p.at("inner")));
      d.bound = num_from(p.at("bound"));
      break;
  }
  return d;
}

bool Descriptor::operator==(const Descriptor& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case SegmentKind::zero: return true;
    case SegmentKind::constant: return same_vec(alpha, o.alpha);
    case SegmentKind::steer:
      return same_vec(z, o.z) && same_vec(alpha, o.alpha) && s == o.s && tau == o.tau && same_vec(x_start, o.x_start) &&
             base == o.base && gain == o.gain && bound == o.bound;
    case SegmentKind::field_difference: {
      bool inner_eq = (inner && o.inner) ? (*inner == *o.inner) : (!inner && !o.inner);
      return a == o.a && b == o.b && bound == o.bound && inner_eq;
    }
  }
  return false;
}

// ------------------------------------------------------------ ControlSchedule

void ControlSchedule::append(const Segment& s) {
  if (!(s.t1 > s.t0)) throw Error(ErrorCode::HypothesisViolation, "control segment must have t1 > t0", {{"t0", s.t0}, {"t1", s.t1}});
  if (!segments.empty()) {
    if (s.t0 != segments.back().t1)
      throw Error(ErrorCode::HypothesisViolation, "control segments must be contiguous",
                  {{"end", segments.back().t1}, {"start", s.t0}});
    if (s.d.kind == SegmentKind::zero && segments.back().d.kind == SegmentKind::zero) {
      segments.back().t1 = s.t1;
      return;
    }
  }
  segments.push_back(s);
}

size_t ControlSchedule::find(double t) const {
  if (segments.empty() || t < segments.front().t0 || t > segments.back().t1) return segments.size();
  if (t == segments.back().t1) return segments.size() - 1;
  auto it = std::upper_bound(segments.begin(), segments.end(), t,
                             [](double v, const Segment& s) { return v < s.t0; });
  return static_cast<size_t>(it - segments.begin()) - 1;
}

void ControlSchedule::validate() const {
  for (size_t i = 0; i < segments.size(); ++i) {
    if (!(segments[i].t1 > segments[i].t0))
      throw Error(ErrorCode::HypothesisViolation, "empty control segment", {{"index", i}});
    if (i > 0 && segments[i].t0 != segments[i - 1].t1)
      throw Error(ErrorCode::HypothesisViolation, "control segments are not contiguous", {{"index", i}});
  }
}

static json segment_json(const Segment& s) {
  json d = s.d.to_json();
  return {{"t0", s.t0}, {"t1", s.t1}, {"kind", d["kind"]}, {"params", d["params"]}};
}

static Segment segment_from(const json& j) {
  Segment s;
  s.t0 = j.at("t0").get<double>();
  s.t1 = j.at("t1").get<double>();
  s.d = Descriptor::from_json(j);
  return s;
}

json ControlSchedule::to_json() const {
  json segs = json::array();
  for (const auto& s : segments) segs.push_back(segment_json(s));
  return {{"sup_cert", num_json(sup_cert)}, {"segments", segs}};
}

ControlSchedule ControlSchedule::from_json(const json& j) {
  ControlSchedule u;
  u.sup_cert = num_from(j.at("sup_cert"));
  for (const auto& s : j.at("segments")) u.segments.push_back(segment_from(s));
  u.validate();
  return u;
}

void ControlSchedule::write(std::ostream& os) const {
  os << "{\"sup_cert\":" << num_json(sup_cert).dump() << ",\"segments\":[";
  for (size_t i = 0; i < segments.size(); ++i) {
    os << (i ? ",\n" : "\n") << segment_json(segments[i]).dump();
  }
  os << "\n]}\n";
}

ControlSchedule ControlSchedule::read(std::istream& is) {
  // Segments are converted as soon as they are parsed so the document tree
  // never holds the whole list.
  ControlSchedule u;
  bool in_segments = false;
  json::parser_callback_t cb = [&](int depth, json::parse_event_t ev, json& parsed) -> bool {
    if (ev == json::parse_event_t::key && depth == 1) in_segments = parsed == "segments";
    if (ev == json::parse_event_t::object_end && depth == 2 && in_segments) {
      u.segments.push_back(segment_from(parsed));
      return false;
    }
    return true;
  };
  json root;
  try {
    root = json::parse(is, cb);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed control file: ") + e.what());
  }
  if (!root.contains("sup_cert") || !root.contains("segments"))
    throw Error(ErrorCode::ConfigError, "control file needs sup_cert and segments");
  u.sup_cert = num_from(root.at("sup_cert"));
  u.validate();
  return u;
}

ControlSchedule concat(const ControlSchedule& u1, const ControlSchedule& u2) {
  if (u2.empty()) return u1;
  if (u1.empty()) return u2;
  if (u1.t_end() != u2.t_begin())
    throw Error(ErrorCode::HypothesisViolation, u1.t_end() < u2.t_begin() ? "gap between schedules" : "schedules overlap",
                {{"end", u1.t_end()}, {"start", u2.t_begin()}});
  ControlSchedule out = u1;
  for (const auto& s : u2.segments) out.append(s);
  out.sup_cert = std::max(u1.sup_cert, u2.sup_cert);
  return out;
}

// --------------------------------------------------------------- evaluation

ControlFn make_control(const Descriptor& d, const FieldRegistry& reg, int dim) {
  switch (d.kind) {
    case SegmentKind::zero: return [dim](double, const Vec&) { return Vec(Vec::Zero(dim)); };
    case SegmentKind::constant: {
      Vec a = d.alpha;
      return [a](double, const Vec&) { return a; };
    }
    case SegmentKind::steer: {
      auto F = reg.get(d.base).eval_fn();
      Vec fz = F(d.z);
      Vec slope = fz + d.alpha;
      Vec xs = d.x_start, a = d.alpha;
      if (d.gain > 0.0) {
        const double k = d.gain / d.tau;
        return [F, fz, slope, xs, a, k](double sigma, const Vec& x) {
          Vec xe = xs + sigma * slope;
          return Vec(fz - F(xe) + a + k * (xe - x));
        };
      }
      return [F, fz, slope, xs, a](double sigma, const Vec&) { return Vec(fz - F(xs + sigma * slope) + a); };
    }
    case SegmentKind::field_difference: {
      const VectorField& Af = reg.get(d.a);
      auto A = Af.eval_fn();
      auto B = reg.get(d.b).eval_fn();
      ControlFn in = make_control(d.inner ? *d.inner : Descriptor::zero(), reg, dim);
      if (Af.transport) {
        auto T = Af.transport;
        auto C = Af.chart;
        return [A, B, in, T, C](double sigma, const Vec& x) {
          return Vec(A(x) - B(x) + T(x) * in(sigma, C ? C(x) : x));
        };
      }
      return [A, B, in](double sigma, const Vec& x) { return Vec(A(x) - B(x) + in(sigma, x)); };
    }
  }
  return nullptr;
}

Rhs make_segment_rhs(const VectorField& V, const std::string& base_id, const Descriptor& d, const FieldRegistry& reg) {
  auto Vf = V.eval_fn();
  const int dim = V.dim();
  if (d.kind == SegmentKind::zero) return [Vf](double, const Vec& x) { return Vf(x); };
  if (d.kind == SegmentKind::field_difference && d.b == base_id) {
    const VectorField& Af = reg.get(d.a);
    auto A = Af.eval_fn();
    const Descriptor& in = d.inner ? *d.inner : Descriptor::zero();
    if (in.kind == SegmentKind::zero) return [A](double, const Vec& x) { return A(x); };
    ControlFn u = make_control(in, reg, dim);
    if (Af.transport) {
      auto T = Af.transport;
      auto C = Af.chart;
      return [A, u, T, C](double sigma, const Vec& x) { return Vec(A(x) + T(x) * u(sigma, C ? C(x) : x)); };
    }
    return [A, u](double sigma, const Vec& x) { return Vec(A(x) + u(sigma, x)); };
  }
  ControlFn u = make_control(d, reg, dim);
  return [Vf, u](double sigma, const Vec& x) { return Vec(Vf(x) + u(sigma, x)); };
}

namespace {

struct Piece {
  Vec x_end;
  double sup_u = 0.0;
  long steps = 0;
  double budget = 0.0;
};

// Local time sigma0 -> sigma1, global time = offset + sigma.
// |u| is sampled at accepted steps as |f - V(x)|, which holds for every
// right-hand side built by make_segment_rhs.
Piece run_piece(const Rhs& rhs, const VectorField::EvalFn& u, double sigma0, double sigma1, double offset, const Vec& x0,
                const Settings& s, Trajectory* traj, bool boundaries_only) {
  Piece out;
  Stepper st(rhs, s, sigma0, x0);
  if (u) out.sup_u = (st.f() - u(st.x())).norm();
  if (traj && traj->empty()) traj->push(offset + sigma0, st.x(), st.f());
  st.advance(sigma1, [&](const Stepper& k) {
    if (u) out.sup_u = std::max(out.sup_u, (k.f() - u(k.x())).norm());
    if (traj && (!boundaries_only || k.t() == sigma1)) {
      Vec xu = k.x_end_unwrapped();
      traj->push(offset + k.t(), k.x(), k.f(), &xu);
    }
    return true;
  });
  out.x_end = st.x();
  out.steps = st.steps();
  out.budget = st.error_budget();
  return out;
}

}  // namespace

SegmentRun run_segment(const VectorField& V, const std::string& base_id, const Segment& seg, const FieldRegistry& reg,
                       const Vec& x0, const Settings& s, Trajectory* traj, bool sample_u, bool boundaries_only) {
  Rhs rhs = make_segment_rhs(V, base_id, seg.d, reg);
  Piece p = run_piece(rhs, sample_u ? V.eval_fn() : VectorField::EvalFn(), 0.0, seg.length(), seg.t0, x0, s, traj,
                      boundaries_only);
  return {p.x_end, p.sup_u, p.steps, p.budget};
}

ControlledRun integrate_controlled(const VectorField& V, const ControlSchedule& u, const FieldRegistry& reg,
                                   const Vec& x0, double t0, double t1, const Settings& s,
                                   const ControlledOptions& opt) {
  if (!(t1 > t0)) throw Error(ErrorCode::HypothesisViolation, "integrate needs t1 > t0", {{"t0", t0}, {"t1", t1}});
  ControlledRun run;
  run.traj = Trajectory(V.dim());
  Settings local = s;
  if (V.period && !local.period) local.period = V.period;
  run.traj.period = local.period;
  Vec x = x0;
  double t = t0;
  const Descriptor zero = Descriptor::zero();
  while (t < t1) {
    size_t i = u.find(t);
    const Descriptor* d = &zero;
    double seg0 = t, seg1 = t1;
    if (i < u.segments.size() && t < u.segments[i].t1) {
      d = &u.segments[i].d;
      seg0 = u.segments[i].t0;
      seg1 = std::min(t1, u.segments[i].t1);
    } else if (!u.empty() && t < u.t_begin()) {
      seg1 = std::min(t1, u.t_begin());
    }
    Rhs rhs = make_segment_rhs(V, opt.base_id, *d, reg);
    VectorField::EvalFn uf = d->kind == SegmentKind::zero ? VectorField::EvalFn() : V.eval_fn();
    // Whole segments run in local time exactly as the planner designed them.
    double sigma0 = t - seg0, sigma1 = seg1 - seg0;
    Piece p = run_piece(rhs, uf, sigma0, sigma1, seg0, x, local, &run.traj, opt.boundaries_only);
    run.sup_u = std::max(run.sup_u, p.sup_u);
    run.steps += p.steps;
    run.traj.tol_budget += p.budget;
    x = p.x_end;
    t = seg1;
  }
  return run;
}

double sup_norm(const ControlSchedule& u, const FieldRegistry& reg, int dim, int samples_per_segment,
                const Trajectory* traj) {
  double best = 0.0;
  const int n = std::max(samples_per_segment, 2);
  for (const auto& seg : u.segments) {
    best = std::max(best, seg.d.analytic_bound());
    if (seg.d.kind == SegmentKind::zero) continue;
    if (seg.d.kind == SegmentKind::field_difference && !traj) continue;
    ControlFn f = make_control(seg.d, reg, dim);
    for (int k = 0; k < n; ++k) {
      double sigma = seg.length() * k / (n - 1);
      Vec x = Vec::Zero(dim);
      if (traj) {
        x = traj->at(seg.t0 + sigma);
      } else if (seg.d.kind == SegmentKind::steer) {
        // on the designed path the tracking term vanishes
        x = seg.d.x_start + sigma * (reg.get(seg.d.base)(seg.d.z) + seg.d.alpha);
      }
      best = std::max(best, f(sigma, x).norm());
    }
  }
  return best;
}

}  // namespace steerkit
