#include "steerkit/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"

namespace steerkit {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorCode::ConfigError, "unknown key '" + it.key() + "' in " + where, {{"key", it.key()}});
  }
}

Box box_from_json(const json& j) {
  reject_unknown_keys(j, {"lo", "hi"}, "box");
  Box b{vec_from(j.at("lo")), vec_from(j.at("hi"))};
  if (b.lo.size() != b.hi.size() || !((b.hi - b.lo).minCoeff() > 0.0))
    throw Error(ErrorCode::ConfigError, "box needs lo < hi componentwise");
  return b;
}

json box_to_json(const Box& b) { return {{"lo", vec_json(b.lo)}, {"hi", vec_json(b.hi)}}; }

FieldSpec field_spec_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"kind", "name", "params", "dim", "expressions", "grid", "domain", "period", "domain_box",
                       "sup_bound", "lip_bound"},
                      "field");
  FieldSpec s;
  const std::string kind = j.value("kind", "builtin");
  if (kind == "builtin") {
    s.kind = FieldSpec::Kind::builtin;
    s.name = j.at("name").get<std::string>();
  } else if (kind == "expression") {
    s.kind = FieldSpec::Kind::expression;
    s.expressions = j.at("expressions").get<std::vector<std::string>>();
    s.name = j.value("name", "expression");
  } else if (kind == "grid") {
    s.kind = FieldSpec::Kind::grid;
    const json& g = j.at("grid");
    reject_unknown_keys(g, {"box", "n", "values"}, "field.grid");
    GridData gd;
    gd.box = box_from_json(g.at("box"));
    gd.n = g.at("n").get<std::vector<int>>();
    gd.values = g.at("values").get<std::vector<double>>();
    s.grid = gd;
    s.name = j.value("name", "grid");
  } else {
    throw Error(ErrorCode::ConfigError, "field.kind must be builtin, expression or grid");
  }
  if (j.contains("params")) {
    for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it)
      s.params[it.key()] = it.value().get<double>();
  }
  s.dim = j.value("dim", s.kind == FieldSpec::Kind::expression ? static_cast<int>(s.expressions.size()) : 2);
  const std::string domain = j.value("domain", "plane");
  if (domain == "torus") {
    s.period = j.contains("period") ? j.at("period").get<double>() : 2.0 * M_PI;
    if (!(*s.period > 0.0)) throw Error(ErrorCode::ConfigError, "torus period must be positive");
  } else if (domain != "plane") {
    throw Error(ErrorCode::ConfigError, "field.domain must be plane or torus");
  } else if (j.contains("period")) {
    throw Error(ErrorCode::ConfigError, "field.period needs domain torus");
  }
  if (j.contains("domain_box")) s.domain_box = box_from_json(j.at("domain_box"));
  if (j.contains("sup_bound")) s.sup_bound = num_from(j.at("sup_bound"));
  if (j.contains("lip_bound")) s.lip_bound = num_from(j.at("lip_bound"));
  return s;
}

json field_spec_to_json(const FieldSpec& s) {
  json j;
  switch (s.kind) {
    case FieldSpec::Kind::builtin: j["kind"] = "builtin"; break;
    case FieldSpec::Kind::expression:
      j["kind"] = "expression";
      j["expressions"] = s.expressions;
      break;
    case FieldSpec::Kind::grid:
      j["kind"] = "grid";
      if (s.grid) j["grid"] = {{"box", box_to_json(s.grid->box)}, {"n", s.grid->n}, {"values", s.grid->values}};
      break;
  }
  j["name"] = s.name;
  j["params"] = json::object();
  for (const auto& [k, v] : s.params) j["params"][k] = v;
  j["dim"] = s.dim;
  j["domain"] = s.period ? "torus" : "plane";
  if (s.period) j["period"] = *s.period;
  if (s.domain_box) j["domain_box"] = box_to_json(*s.domain_box);
  if (s.sup_bound) j["sup_bound"] = num_json(*s.sup_bound);
  if (s.lip_bound) j["lip_bound"] = num_json(*s.lip_bound);
  return j;
}

namespace {

Method method_of(const json& j, const char* key, Method def) {
  return j.contains(key) ? method_from_name(j.at(key).get<std::string>()) : def;
}

FieldCheckParams field_check_from(const json& j) {
  reject_unknown_keys(j, {"box", "samples", "divergence_tol", "vmd_box_sizes", "vmd_threshold", "vmd_resolution"},
                      "field_check");
  FieldCheckParams f;
  if (j.contains("box")) f.box = box_from_json(j.at("box"));
  f.samples = j.value("samples", f.samples);
  f.divergence_tol = j.value("divergence_tol", f.divergence_tol);
  if (j.contains("vmd_box_sizes")) f.vmd_box_sizes = j.at("vmd_box_sizes").get<std::vector<double>>();
  f.vmd_threshold = j.value("vmd_threshold", f.vmd_threshold);
  f.vmd_resolution = j.value("vmd_resolution", f.vmd_resolution);
  return f;
}

CorrectParams correct_from(const json& j) {
  reject_unknown_keys(j,
                      {"epsilon", "method", "roi", "resolution", "p", "alpha0", "max_doublings", "residual_tol",
                       "audit_resolution", "audit_samples", "fd_step", "certify", "certify_points", "certify_radius",
                       "certify_T_max"},
                      "correct");
  CorrectParams c;
  c.epsilon = j.at("epsilon").get<double>();
  CorrectionSettings& s = c.settings;
  if (j.contains("method")) s.method = correction_method_from_name(j.at("method").get<std::string>());
  s.roi = box_from_json(j.at("roi"));
  s.resolution = j.value("resolution", s.resolution);
  s.p = j.value("p", s.p);
  s.alpha0 = j.value("alpha0", s.alpha0);
  s.max_doublings = j.value("max_doublings", s.max_doublings);
  s.residual_tol = j.value("residual_tol", s.residual_tol);
  s.audit_resolution = j.value("audit_resolution", s.audit_resolution);
  s.audit_samples = j.value("audit_samples", s.audit_samples);
  s.fd_step = j.value("fd_step", s.fd_step);
  s.strict = false;
  c.certify = j.value("certify", true);
  c.certify_options.n_points = j.value("certify_points", c.certify_options.n_points);
  c.certify_options.radius = j.value("certify_radius", c.certify_options.radius);
  c.certify_options.T_max = j.value("certify_T_max", c.certify_options.T_max);
  return c;
}

RecurrenceParams recurrence_from(const json& j) {
  reject_unknown_keys(j,
                      {"center", "delta", "radius", "T_min", "T_max", "n_candidates", "include_center", "direction",
                       "tol", "correct_epsilon", "correct_roi"},
                      "recurrence");
  RecurrenceParams r;
  r.center = vec_from(j.at("center"));
  r.delta = j.value("delta", r.delta);
  r.radius = j.value("radius", r.radius);
  r.T_min = j.value("T_min", r.T_min);
  r.T_max = j.value("T_max", r.T_max);
  r.n_candidates = j.value("n_candidates", r.n_candidates);
  r.include_center = j.value("include_center", r.include_center);
  const std::string dir = j.value("direction", "forward");
  if (dir != "forward" && dir != "backward") throw Error(ErrorCode::ConfigError, "direction must be forward or backward");
  r.backward = dir == "backward";
  r.tol = j.value("tol", r.tol);
  if (j.contains("correct_epsilon")) r.correct_epsilon = j.at("correct_epsilon").get<double>();
  if (j.contains("correct_roi")) r.correct_roi = box_from_json(j.at("correct_roi"));
  if (r.correct_epsilon && !r.correct_roi) throw Error(ErrorCode::ConfigError, "correct_epsilon needs correct_roi");
  return r;
}

PlanRequest plan_from(const json& j) {
  reject_unknown_keys(j,
                      {"p", "q", "epsilon", "T_max", "n_candidates", "include_center", "terminal_tol", "audit_samples",
                       "steer_samples", "correction", "roi", "resolution", "vmd_box_sizes", "vmd_resolution",
                       "stats_radius", "method", "design_tol", "search_tol", "verify_factor", "steer_gain", "threads"},
                      "plan");
  PlanRequest r;
  r.p = vec_from(j.at("p"));
  r.q = vec_from(j.at("q"));
  r.epsilon = j.at("epsilon").get<double>();
  if (!(r.epsilon > 0.0)) throw Error(ErrorCode::ConfigError, "plan.epsilon must be positive");
  r.T_max = j.value("T_max", r.T_max);
  r.n_candidates = j.value("n_candidates", r.n_candidates);
  r.include_center = j.value("include_center", r.include_center);
  r.terminal_tol = j.value("terminal_tol", r.terminal_tol);
  r.audit_samples = j.value("audit_samples", r.audit_samples);
  r.steer_samples = j.value("steer_samples", r.steer_samples);
  if (j.contains("correction")) r.correction = correction_method_from_name(j.at("correction").get<std::string>());
  if (j.contains("roi")) r.roi = box_from_json(j.at("roi"));
  r.correction_resolution = j.value("resolution", r.correction_resolution);
  if (j.contains("vmd_box_sizes")) r.vmd_box_sizes = j.at("vmd_box_sizes").get<std::vector<double>>();
  r.vmd_resolution = j.value("vmd_resolution", r.vmd_resolution);
  r.stats_radius = j.value("stats_radius", r.stats_radius);
  const Method m = method_of(j, "method", Method::dop853);
  r.design = Settings::with(m, j.value("design_tol", r.design.atol));
  r.search = Settings::with(m, j.value("search_tol", r.search.atol));
  r.verify_factor = j.value("verify_factor", r.verify_factor);
  r.steer_gain = j.value("steer_gain", r.steer_gain);
  r.threads = j.value("threads", r.threads);
  return r;
}

TorusParams torus_from(const json& j) {
  reject_unknown_keys(j,
                      {"p", "q", "epsilon", "delta", "T_max", "n_candidates", "path_max", "tol", "verify_tol", "max_refinements",
                       "audit_samples", "exterior_samples", "checkpoints", "threads"},
                      "torus_connect");
  TorusParams t;
  t.p = vec_from(j.at("p"));
  t.q = vec_from(j.at("q"));
  t.epsilon = j.at("epsilon").get<double>();
  ConnectOptions& o = t.options;
  if (j.contains("delta")) o.delta = j.at("delta").get<double>();
  o.transit.T_max = j.value("T_max", o.transit.T_max);
  o.transit.n_candidates = j.value("n_candidates", o.transit.n_candidates);
  o.transit.path_max = j.value("path_max", o.transit.path_max);
  o.transit.max_refinements = j.value("max_refinements", o.transit.max_refinements);
  o.transit.threads = j.value("threads", o.transit.threads);
  o.transit.settings = Settings::with(Method::dop853, j.value("tol", o.transit.settings.atol));
  o.verify = Settings::with(Method::dop853, j.value("verify_tol", o.verify.atol));
  o.audit_samples = j.value("audit_samples", o.audit_samples);
  o.exterior_samples = j.value("exterior_samples", o.exterior_samples);
  o.checkpoints = j.value("checkpoints", o.checkpoints);
  return t;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  try {
    reject_unknown_keys(j, {"field", "seed", "output", "field_check", "correct", "recurrence", "plan", "torus_connect",
                            "verify"},
                        "config");
    RunConfig c;
    c.field = field_spec_from_json(j.at("field"));
    c.seed = j.value("seed", c.seed);
    c.output = j.value("output", c.output);
    if (j.contains("field_check")) c.field_check = field_check_from(j.at("field_check"));
    if (j.contains("correct")) c.correct = correct_from(j.at("correct"));
    if (j.contains("recurrence")) c.recurrence = recurrence_from(j.at("recurrence"));
    if (j.contains("plan")) c.plan = plan_from(j.at("plan"));
    if (j.contains("torus_connect")) c.torus_connect = torus_from(j.at("torus_connect"));
    if (j.contains("verify")) {
      reject_unknown_keys(j.at("verify"), {"factor"}, "verify");
      c.verify.factor = j.at("verify").value("factor", c.verify.factor);
    }
    apply_seed(c, c.seed);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config schema: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  if (c.correct) c.correct->settings.seed = seed + 10, c.correct->certify_options.seed = seed + 2;
  if (c.plan) c.plan->seed = seed;
  if (c.torus_connect) c.torus_connect->options.transit.seed = seed, c.torus_connect->options.seed = seed + 4;
}

}  // namespace steerkit
