#include "steerkit/steer_global.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <thread>

#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"
#include "steerkit/recurrence.hpp"
#include "steerkit/steer_local.hpp"
#include "steerkit/traj_correct.hpp"

namespace steerkit {

using nlohmann::json;

RhoTau choose_rho_tau(double lip, double sup, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::HypothesisViolation, "epsilon must be positive", {{"eps", eps}});
  if (!std::isfinite(lip) || !std::isfinite(sup))
    throw Error(ErrorCode::HypothesisViolation, "planning needs finite declared bounds",
                {{"lip", num_json(lip)}, {"sup", num_json(sup)}});
  const double e2 = eps * eps;
  const double t2 = e2 / (144.0 * (lip + eps));
  const double t3 = e2 / (288.0 * (lip + eps) * (sup + eps));
  RhoTau r;
  r.rho = 0.9 * std::min({0.25, t2, t3});
  r.tau = r.rho * eps / 12.0;
  // Any return time above 3/eps gives T (eps/3)/4 > 1/4 > rho.
  if (!(r.rho < 0.25)) throw Error(ErrorCode::HypothesisViolation, "rho must stay below 1/4", {{"rho", r.rho}});
  return r;
}

RhoTau choose_rho_tau(const VectorField& V, double eps) { return choose_rho_tau(V.lip_bound, V.sup_bound, eps); }

size_t waypoint_count(const Vec& p, const Vec& q, double rho) {
  if (!(rho > 0.0)) throw Error(ErrorCode::HypothesisViolation, "rho must be positive", {{"rho", rho}});
  const double L = (q - p).norm();
  if (L == 0.0) return 1;
  return static_cast<size_t>(std::ceil(L / (0.9 * rho / 4.0))) + 1;
}

Vec waypoint(const Vec& p, const Vec& q, size_t n, size_t j) {
  if (j == 0) return p;
  if (j + 1 >= n) return q;
  const double s = static_cast<double>(j) / static_cast<double>(n - 1);
  return p + s * (q - p);
}

std::vector<Vec> waypoints(const Vec& p, const Vec& q, double rho) {
  const size_t n = waypoint_count(p, q, rho);
  std::vector<Vec> out;
  out.reserve(n);
  for (size_t j = 0; j < n; ++j) out.push_back(waypoint(p, q, n, j));
  return out;
}

json PlanRequest::to_json() const {
  return {{"p", vec_json(p)},
          {"q", vec_json(q)},
          {"epsilon", epsilon},
          {"T_max", T_max},
          {"n_candidates", n_candidates},
          {"seed", seed},
          {"include_center", include_center},
          {"terminal_tol", terminal_tol},
          {"steer_gain", steer_gain},
          {"design", {{"method", method_name(design.method)}, {"atol", design.atol}, {"rtol", design.rtol}}},
          {"search", {{"method", method_name(search.method)}, {"atol", search.atol}, {"rtol", search.rtol}}}};
}

namespace {

Box default_roi(const Vec& p, const Vec& q) {
  const double pad = std::max(1.0, 0.1 * (q - p).norm());
  Box b{p.cwiseMin(q), p.cwiseMax(q)};
  b.lo.array() -= pad;
  b.hi.array() += pad;
  return b;
}

CorrectionSettings correction_settings(const VectorField& V, const PlanRequest& req) {
  CorrectionSettings cs;
  const bool has_stream = V.potential && std::isfinite(V.potential->sup) &&
                          ((V.dim() == 2 && V.potential->h) || (V.dim() == 3 && V.potential->A));
  cs.method = req.correction ? *req.correction : (has_stream ? CorrectionMethod::stream : CorrectionMethod::poisson);
  cs.roi = req.roi ? *req.roi : default_roi(req.p, req.q);
  cs.resolution = req.correction_resolution;
  cs.seed = req.seed + 10;
  return cs;
}

json settings_json(const Settings& s) {
  return {{"method", method_name(s.method)}, {"atol", s.atol}, {"rtol", s.rtol}};
}

// Inner steer control sampled at a few local times.
double sample_steer(const Descriptor& d, const FieldRegistry& reg, int dim, int n) {
  ControlFn u = make_control(d, reg, dim);
  const Vec slope = reg.get(d.base)(d.z) + d.alpha;
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    double sigma = d.tau * (n == 1 ? 1.0 : static_cast<double>(i) / (n - 1));
    best = std::max(best, u(sigma, Vec(d.x_start + sigma * slope)).norm());
  }
  return best;
}

std::vector<RecurrenceResult> search_all(const VectorField& Vt, const Vec& p, const Vec& q, size_t n, double delta,
                                         double radius, double T_min, const PlanRequest& req) {
  std::vector<RecurrenceResult> out(n > 0 ? n - 1 : 0);
  RecurrenceOptions ro;
  ro.n_candidates = req.n_candidates;
  ro.seed = req.seed;
  ro.include_center = req.include_center;
  ro.settings = req.search;
  int threads = req.threads > 0 ? req.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = static_cast<int>(std::min<size_t>(threads, std::max<size_t>(out.size(), 1)));
  std::vector<std::optional<Error>> failure(threads);
  std::vector<size_t> fail_at(threads, 0);
  auto work = [&](int w) {
    for (size_t j = w; j < out.size(); j += threads) {
      if (w == 0 && req.progress && j % 1024 == 0) req.progress("recurrence", j, out.size());
      try {
        out[j] = find_poisson_stable(Vt, waypoint(p, q, n, j), delta, radius, T_min, req.T_max, ro);
      } catch (const Error& e) {
        failure[w] = e;
        fail_at[w] = j;
        return;
      }
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  // Report the smallest failing waypoint so the error is deterministic.
  std::optional<size_t> first;
  int who = -1;
  for (int w = 0; w < threads; ++w)
    if (failure[w] && (!first || fail_at[w] < *first)) first = fail_at[w], who = w;
  if (first) {
    json det = failure[who]->details();
    det["waypoint_index"] = *first;
    det["waypoint"] = vec_json(waypoint(p, q, n, *first));
    throw Error(failure[who]->code(), std::string(failure[who]->what()) + " (waypoint " + std::to_string(*first) + ")",
                det);
  }
  return out;
}

struct Bridge {
  std::optional<PhiMap> map;
  double delta = 0.0, c0 = 0.0, sampled = 0.0;
  json audit;
};

Bridge make_bridge(const VectorField& Vt, const Vec& x1, const Vec& p, const Vec& q, double eps3,
                   double stats_radius, std::uint64_t seed, FieldRegistry& reg) {
  Bridge b;
  const double gap = (p - x1).norm();
  if (gap == 0.0) return b;
  FieldStats st = local_stats(Vt, x1, stats_radius, false);
  double delta = choose_delta(st, eps3, false);
  const double floor = std::cbrt(gap);
  while (2.0 * delta > (q - x1).norm() && delta * 0.5 >= floor) delta *= 0.5;
  if (2.0 * delta > (q - x1).norm())
    throw Error(ErrorCode::BudgetExceeded, "bridge ball around the first stable point would contain q",
                {{"inequality", "2 delta_b <= |q - x1'| with delta_b >= |p - x1'|^(1/3)"},
                 {"delta_b", delta},
                 {"dist_q", (q - x1).norm()}});
  b.map.emplace(x1, p, delta);
  b.delta = delta;
  b.c0 = c0_bound(st, delta);
  VectorField Vbar = pushforward_field(Vt, *b.map, "Vbar");
  PhiAudit a = audit_phi(Vt, Vbar, *b.map, 2000, seed);
  b.sampled = a.field_sup_dev;
  b.audit = a.to_json();
  reg.add("Vbar", Vbar);
  return b;
}

// Rewrites a design-space schedule onto the bridged field.
ControlSchedule onto_bridge(const ControlSchedule& u, double bridge_bound) {
  ControlSchedule out;
  for (auto seg : u.segments) {
    seg.d.a = "Vbar";
    seg.d.bound += bridge_bound;
    out.segments.push_back(seg);
  }
  return out;
}

}  // namespace

PlanResult plan(const VectorField& V, const PlanRequest& req) {
  const int d = V.dim();
  if (!(req.epsilon > 0.0))
    throw Error(ErrorCode::HypothesisViolation, "epsilon must be positive", {{"eps", req.epsilon}});
  if (req.p.size() != d || req.q.size() != d)
    throw Error(ErrorCode::ConfigError, "p and q must match the field dimension");
  const double eps = req.epsilon, eps3 = eps / 3.0;
  PlanResult R;
  R.p = req.p;
  R.q = req.q;
  R.epsilon = eps;
  R.design = req.design;
  R.terminal_tol = req.terminal_tol;
  R.registry.add("V", V);
  R.trajectory = Trajectory(d);
  if (same_vec(req.p, req.q)) {
    R.trajectory.push(0.0, req.p, V(req.p));
    R.registry_spec = {{"Vt", nullptr}, {"Vbar", nullptr}};
    R.certificate = {{"pass", true},
                     {"p", vec_json(req.p)},
                     {"q", vec_json(req.q)},
                     {"epsilon", eps},
                     {"T", 0.0},
                     {"terminal_error", 0.0},
                     {"n_waypoints", 1},
                     {"note", "p = q: zero control"}};
    return R;
  }

  // Hypothesis check before any planning work.
  DriftReport vmd = check_vmd(V, req.vmd_box_sizes, eps / 10.0, {}, req.vmd_resolution);
  if (vmd.verdict != DriftVerdict::vanishing)
    throw Error(ErrorCode::VMDViolation, "mean drift does not vanish; global steering is not available",
                vmd.to_json());
  if (req.progress) req.progress("correct", 0, 1);

  CorrectionSettings cs = correction_settings(V, req);
  CorrectionResult corr = correct(V, eps3, cs);
  const VectorField& Vt = corr.field;
  R.registry.add("Vt", Vt);
  const double corr_bound = corr.method == CorrectionMethod::stream ? corr.sup_delta_bound : 1.05 * corr.sup_delta;
  json vt_spec = {{"method", correction_method_name(corr.method)},
                  {"eps", eps3},
                  {"roi_lo", vec_json(cs.roi.lo)},
                  {"roi_hi", vec_json(cs.roi.hi)},
                  {"resolution", cs.resolution},
                  {"p", corr.weight.p()},
                  {"alpha", corr.alpha_used},
                  {"seed", cs.seed}};

  const RhoTau rt = choose_rho_tau(V, eps);
  const double rho = rt.rho;
  const size_t n = waypoint_count(req.p, req.q, rho);
  const double spacing = (req.q - req.p).norm() / static_cast<double>(n - 1);
  FieldStats st = local_stats(Vt, req.p, req.stats_radius, false);
  const double delta_c = choose_delta(st, eps3, false);
  const double delta = 0.9 * std::min(rho / 8.0, delta_c * delta_c * delta_c);
  const double T_min = 3.0 / eps;

  std::vector<RecurrenceResult> rec = search_all(Vt, req.p, req.q, n, delta, rho / 2.0, T_min, req);

  // Hops under Vt from x1' with budget eps/3 each.
  const double Lt = Vt.lip_bound, Ft = Vt.sup_bound;
  ControlSchedule U;
  U.segments.reserve(2 * rec.size());
  Trajectory design_traj(d);
  Vec X = rec.empty() ? req.p : rec.front().point;
  double A = 0.0;
  design_traj.push(A, X, Vt(X));
  double tau_min = kInf, tau_max = 0.0, rho_min = kInf, margin_min = kInf, steer_bound_max = 0.0;
  double steer_sampled = 0.0, corr_sampled = 0.0, design_sup = 0.0;
  double T_ret_min = kInf;
  json stable = json::array();
  std::vector<double> returns;
  returns.reserve(rec.size());
  const std::string base = "V";
  for (size_t k = 0; k < rec.size(); ++k) {
    if (req.progress && k % 1024 == 0) req.progress("hops", k, rec.size());
    const double Tk = rec[k].return_time;
    returns.push_back(Tk);
    T_ret_min = std::min(T_ret_min, Tk);
    if (!same_vec(rec[k].point, waypoint(req.p, req.q, n, k)))
      stable.push_back({{"j", k}, {"point", vec_json(rec[k].point)}});
    const Vec target = k + 1 < rec.size() ? rec[k + 1].point : req.q;
    const TauRho h = compute_tau_rho(Lt, Ft, Tk, eps3);
    const double B = A + (Tk - h.tau), C = A + Tk;
    Segment s0{A, B, Descriptor::field_difference("Vt", base, Descriptor::zero(), corr_bound)};
    SegmentRun r0 = run_segment(V, base, s0, R.registry, X, req.design, &design_traj, true, true);
    Segment free{B, C, s0.d};
    const Vec z = run_segment(V, base, free, R.registry, r0.x_end, req.design, nullptr, false).x_end;
    const double miss = (z - target).norm();
    if (!(miss < h.rho))
      throw Error(ErrorCode::BudgetExceeded, "hop target outside the local steering radius",
                  {{"inequality", "|x(s) - y| < rho_local"},
                   {"hop", k},
                   {"distance", miss},
                   {"rho_local", h.rho},
                   {"return_error", rec[k].return_error}});
    const double L1 = C - B;
    const Vec fz = Vt(z);
    Descriptor sd;
    sd.kind = SegmentKind::steer;
    sd.z = z;
    sd.x_start = r0.x_end;
    sd.s = C;
    sd.tau = L1;
    sd.base = "Vt";
    sd.gain = req.steer_gain;
    sd.alpha = (target - r0.x_end - L1 * fz) / L1;
    sd.bound = sd.alpha.norm() + Lt * std::max((r0.x_end - z).norm(), (target - z).norm());
    if (!(sd.bound < eps3))
      throw Error(ErrorCode::BudgetExceeded, "steering bound reaches eps/3",
                  {{"inequality", "|alpha| + L r < eps/3"}, {"hop", k}, {"bound", sd.bound}, {"eps3", eps3}});
    const double s_samp = sample_steer(sd, R.registry, d, req.steer_samples);
    Segment s1{B, C, Descriptor::field_difference("Vt", base, sd, corr_bound)};
    SegmentRun r1 = run_segment(V, base, s1, R.registry, r0.x_end, req.design, &design_traj, true, true);
    corr_sampled = std::max(corr_sampled, r0.sup_u);
    steer_sampled = std::max(steer_sampled, s_samp);
    design_sup = std::max({design_sup, r0.sup_u, r1.sup_u});
    tau_min = std::min(tau_min, h.tau);
    tau_max = std::max(tau_max, h.tau);
    rho_min = std::min(rho_min, h.rho);
    margin_min = std::min(margin_min, h.rho - miss);
    steer_bound_max = std::max(steer_bound_max, sd.bound);
    U.append(s0);
    U.append(s1);
    X = r1.x_end;
    A = C;
  }
  if (rec.empty()) {
    // Two-point chain with n == 1 cannot happen for p != q; keep the guard.
    throw Error(ErrorCode::HypothesisViolation, "no waypoints to connect");
  }

  // Bridge the true start onto x1'.
  Bridge br = make_bridge(Vt, rec.front().point, req.p, req.q, eps3, req.stats_radius, req.seed + 20, R.registry);
  json bar_spec = nullptr;
  if (br.map) {
    bar_spec = {{"x0", vec_json(br.map->x0())}, {"y0", vec_json(br.map->y0())}, {"delta", br.delta}};
    U = onto_bridge(U, br.c0);
    ControlledOptions co;
    co.boundaries_only = true;
    ControlledRun run = integrate_controlled(V, U, R.registry, req.p, 0.0, U.t_end(), req.design, co);
    R.trajectory = std::move(run.traj);
    R.sup_u_sampled = run.sup_u;
  } else {
    R.trajectory = std::move(design_traj);
    R.sup_u_sampled = design_sup;
  }
  R.T = U.t_end();
  U.sup_cert = 0.0;
  for (const auto& seg : U.segments) U.sup_cert = std::max(U.sup_cert, seg.d.analytic_bound());
  R.control = std::move(U);
  R.registry_spec = {{"Vt", vt_spec}, {"Vbar", bar_spec}};
  const Vec xT = R.trajectory.states().back();
  R.terminal_error = (xT - req.q).norm();

  const double corr_term = std::max(corr.sup_delta, corr_sampled);
  json checks = {
      {"terminal_error", R.terminal_error <= req.terminal_tol},
      {"sup_u_sampled_below_eps", R.sup_u_sampled < eps},
      {"sup_u_analytic_below_eps", R.control.sup_cert < eps},
      {"bridge_term_below_eps3", br.sampled < eps3 && br.c0 < eps3},
      {"correction_term_below_eps3", corr_term < eps3 && corr_bound < eps3},
      {"steering_term_below_eps3", steer_sampled < eps3 && steer_bound_max < eps3},
      {"budget_split", R.sup_u_sampled <= br.sampled + corr_term + steer_sampled + 1e-12 ||
                           R.sup_u_sampled <= R.control.sup_cert},
      {"rho_below_quarter", rho < 0.25},
      {"tau_relation", rt.tau == rho * eps / 12.0},
      {"delta_below_rho_over_8", delta < rho / 8.0},
      {"spacing_below_rho_over_4", spacing < rho / 4.0},
      {"return_times_above_3_over_eps", T_ret_min > T_min},
      {"hop_preconditions", margin_min > 0.0},
  };
  bool pass = true;
  for (auto& [k, v] : checks.items()) pass = pass && v.get<bool>();

  R.certificate = {
      {"pass", pass},
      {"p", vec_json(req.p)},
      {"q", vec_json(req.q)},
      {"epsilon", eps},
      {"T", R.T},
      {"terminal_error", R.terminal_error},
      {"terminal_tol", req.terminal_tol},
      {"sup_u", {{"sampled", R.sup_u_sampled}, {"analytic", R.control.sup_cert}}},
      {"budget",
       {{"eps_third", eps3},
        {"bridge", {{"sampled", br.sampled}, {"bound", br.c0}}},
        {"correction", {{"sampled", corr_term}, {"bound", corr_bound}}},
        {"steering", {{"sampled", steer_sampled}, {"bound", steer_bound_max}}}}},
      {"rho", rho},
      {"tau", rt.tau},
      {"delta", delta},
      {"delta_c", delta_c},
      {"waypoints", {{"n", n}, {"spacing", spacing}, {"rule", "uniform on [p, q]"}}},
      {"return_times", returns},
      {"return_time_min", T_ret_min},
      {"T_min", T_min},
      {"stable_points", stable},
      {"hops",
       {{"count", rec.size()},
        {"tau_min", tau_min},
        {"tau_max", tau_max},
        {"rho_local_min", rho_min},
        {"precondition_margin_min", margin_min},
        {"steer_bound_max", steer_bound_max}}},
      {"correction", corr.to_json()},
      {"vmd", vmd.to_json()},
      {"bridge", br.map ? json{{"delta", br.delta}, {"c0_bound", br.c0}, {"audit", br.audit}} : json(nullptr)},
      {"settings",
       {{"design", settings_json(req.design)}, {"search", settings_json(req.search)}, {"steer_gain", req.steer_gain}}},
      {"checks", checks},
      {"fields", R.registry_spec},
  };
  return R;
}

FieldRegistry rebuild_registry(const VectorField& V, const json& spec) {
  FieldRegistry reg;
  reg.add("V", V);
  if (!spec.contains("Vt") || spec.at("Vt").is_null()) return reg;
  const json& t = spec.at("Vt");
  CorrectionSettings cs;
  cs.method = correction_method_from_name(t.at("method").get<std::string>());
  cs.roi = Box{vec_from(t.at("roi_lo")), vec_from(t.at("roi_hi"))};
  cs.resolution = t.at("resolution").get<int>();
  cs.p = t.at("p").get<double>();
  cs.alpha0 = t.at("alpha").get<double>();
  cs.max_doublings = 0;
  cs.seed = t.at("seed").get<std::uint64_t>();
  cs.strict = false;
  CorrectionResult corr = correct(V, t.at("eps").get<double>(), cs);
  reg.add("Vt", corr.field);
  if (spec.contains("Vbar") && !spec.at("Vbar").is_null()) {
    const json& b = spec.at("Vbar");
    PhiMap map(vec_from(b.at("x0")), vec_from(b.at("y0")), b.at("delta").get<double>());
    reg.add("Vbar", pushforward_field(corr.field, map, "Vbar"));
  }
  return reg;
}

json VerifyReport::to_json() const {
  return {{"pass", pass}, {"terminal_error", terminal_error}, {"sup_u", sup_u}, {"steps", steps}, {"checks", checks}};
}

VerifyReport verify_plan(const VectorField& V, const PlanResult& r, std::optional<Settings> s, double factor) {
  VerifyReport rep;
  const double eps = r.epsilon;
  if (r.control.empty()) {
    rep.terminal_error = (r.p - r.q).norm();
    rep.checks["terminal_error"] = rep.terminal_error <= r.terminal_tol;
    rep.pass = rep.checks["terminal_error"].get<bool>();
    return rep;
  }
  auto record = [&](const std::string& name, bool ok) {
    rep.checks[name] = ok;
    rep.pass = rep.pass && ok;
  };
  try {
    r.control.validate();
    record("schedule_contiguous", r.control.t_begin() == 0.0);
  } catch (const Error&) {
    record("schedule_contiguous", false);
  }

  // Support structure: inner controls are zero or steer, and a steer acts
  // exactly on the tail (s - tau, s] of its segment.
  bool support = true, bounds = true;
  for (const auto& seg : r.control.segments) {
    const Descriptor& d = seg.d;
    if (d.kind != SegmentKind::field_difference || d.b != "V") {
      support = false;
      continue;
    }
    const Descriptor& in = d.inner ? *d.inner : Descriptor::zero();
    if (in.kind == SegmentKind::steer) {
      support = support && in.s == seg.t1 && in.tau == seg.length();
      bounds = bounds && in.bound < eps / 3.0;
    } else if (in.kind != SegmentKind::zero) {
      support = false;
    }
    bounds = bounds && d.analytic_bound() < eps;
  }
  record("support_structure", support);
  record("analytic_bounds", bounds);

  const Settings base = s ? *s : r.design;
  ControlledOptions co;
  co.boundaries_only = true;
  ControlledRun run = integrate_controlled(V, r.control, r.registry, r.p, 0.0, r.control.t_end(),
                                           base.finer(factor), co);
  rep.steps = run.steps;
  rep.sup_u = run.sup_u;
  rep.terminal_error = (run.traj.states().back() - r.q).norm();
  record("terminal_error", rep.terminal_error <= r.terminal_tol);
  record("sup_u_below_eps", rep.sup_u < eps);

  const json& c = r.certificate;
  if (c.contains("rho")) {
    const double rho = c.at("rho").get<double>();
    record("rho_below_quarter", rho < 0.25);
    record("tau_relation", c.at("tau").get<double>() == rho * eps / 12.0);
    record("delta_below_rho_over_8", c.at("delta").get<double>() < rho / 8.0);
    const size_t n = c.at("waypoints").at("n").get<size_t>();
    const double spacing = (r.q - r.p).norm() / static_cast<double>(n - 1);
    record("spacing_below_rho_over_4", spacing < rho / 4.0);
    bool returns = true;
    for (const auto& t : c.at("return_times")) returns = returns && t.get<double>() > 3.0 / eps;
    record("return_times_above_3_over_eps", returns);
    const json& b = c.at("budget");
    bool split = true;
    for (const char* term : {"bridge", "correction", "steering"})
      split = split && b.at(term).at("sampled").get<double>() < eps / 3.0;
    record("budget_terms_below_eps3", split);
  }
  return rep;
}

void write_plotdata(std::ostream& os, const VectorField& V, const PlanResult& r) {
  os << "t,u_norm,dist_to_q\n";
  const auto& ts = r.trajectory.times();
  const auto& xs = r.trajectory.states();
  const auto& fs = r.trajectory.slopes();
  char buf[96];
  for (size_t i = 0; i < ts.size(); ++i) {
    double un = (fs[i] - V(xs[i])).norm();
    double dq = (xs[i] - r.q).norm();
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", ts[i], un, dq);
    os << buf;
  }
}

}  // namespace steerkit
