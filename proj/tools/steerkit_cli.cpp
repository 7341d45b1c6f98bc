// steerkit: field audits, correction, recurrence probes, planning,
// verification and torus connection from a JSON run config.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "steerkit/config.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"
#include "steerkit/recurrence.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace steerkit;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool json_out = false;
};

// temp file + rename so readers never see a partial artifact
void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error(ErrorCode::ConfigError, "cannot write " + tmp.string());
    body(os);
    if (!os) throw Error(ErrorCode::IntegrationFailure, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) {
  write_atomic(path, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

RunConfig load(const Common& c) {
  RunConfig rc = load_run_config(c.config);
  if (c.seed) apply_seed(rc, *c.seed);
  if (!c.out.empty()) rc.output = c.out;
  return rc;
}

int emit(const Common& c, const json& report, bool pass) {
  if (c.json_out) std::cout << report.dump() << "\n";
  return pass ? 0 : 1;
}

int cmd_field_check(const Common& c) {
  RunConfig rc = load(c);
  VectorField V = build_field(rc.field);
  FieldCheckParams fc = rc.field_check.value_or(FieldCheckParams{});
  const int d = V.dim();
  Box box = fc.box ? *fc.box : Box{Vec::Zero(d), Vec::Constant(d, 2.0 * M_PI)};
  double div = 0.0;
  for (int i = 0; i < fc.samples; ++i) {
    Vec x = box.lo + halton_point(1 + rc.seed * 7919ULL + i, d).cwiseProduct(box.hi - box.lo);
    div = std::max(div, std::abs(estimate_divergence(V, x, 1e-5)));
  }
  NormEstimate ne = estimate_norms(V, box, fc.samples, rc.seed);
  bool bounds_ok = true;
  std::string bounds_msg;
  try {
    audit_declared_bounds(V, box, fc.samples, rc.seed);
  } catch (const Error& e) {
    bounds_ok = false;
    bounds_msg = e.what();
  }
  DriftReport vmd = check_vmd(V, fc.vmd_box_sizes, fc.vmd_threshold, {}, fc.vmd_resolution);
  const bool div_ok = div <= fc.divergence_tol;
  const bool pass = div_ok && bounds_ok && vmd.verdict == DriftVerdict::vanishing;
  json report = {{"pass", pass},
                 {"field", field_spec_to_json(rc.field)},
                 {"divergence", {{"max_abs", div}, {"tolerance", fc.divergence_tol}, {"pass", div_ok}}},
                 {"norms",
                  {{"sup_sampled", ne.sup},
                   {"lip_sampled", ne.lip},
                   {"sup_declared", num_json(V.sup_bound)},
                   {"lip_declared", num_json(V.lip_bound)},
                   {"pass", bounds_ok},
                   {"message", bounds_msg}}},
                 {"vmd", vmd.to_json()}};
  write_json(fs::path(rc.output) / "field_check.json", report);
  return emit(c, report, pass);
}

int cmd_correct(const Common& c) {
  RunConfig rc = load(c);
  if (!rc.correct) throw Error(ErrorCode::ConfigError, "config has no 'correct' section");
  VectorField V = build_field(rc.field);
  const CorrectParams& cp = *rc.correct;
  CorrectionResult r = correct(V, cp.epsilon, cp.settings);
  json report = {{"correction", r.to_json()}};
  bool pass = !r.failure;
  if (cp.certify) {
    json cert = certify_proposition(V, r, cp.epsilon, cp.settings.roi, cp.certify_options);
    pass = pass && cert.value("pass", true);
    report["certificate"] = cert;
  }
  report["pass"] = pass;
  write_json(fs::path(rc.output) / "correction.json", report);
  return emit(c, report, pass);
}

int cmd_recurrence(const Common& c) {
  RunConfig rc = load(c);
  if (!rc.recurrence) throw Error(ErrorCode::ConfigError, "config has no 'recurrence' section");
  VectorField V = build_field(rc.field);
  const RecurrenceParams& rp = *rc.recurrence;
  json report;
  VectorField F = V;
  if (rp.correct_epsilon) {
    CorrectionSettings cs;
    cs.roi = *rp.correct_roi;
    cs.seed = rc.seed + 10;
    cs.method = V.potential ? CorrectionMethod::stream : CorrectionMethod::poisson;
    CorrectionResult cr = correct(V, *rp.correct_epsilon, cs);
    F = cr.field;
    report["correction"] = cr.to_json();
  }
  RecurrenceOptions ro;
  ro.n_candidates = rp.n_candidates;
  ro.seed = rc.seed;
  ro.include_center = rp.include_center;
  ro.direction = rp.backward ? TimeDirection::backward : TimeDirection::forward;
  ro.settings = Settings::with(Method::dop853, rp.tol);
  RecurrenceResult r = find_poisson_stable(F, rp.center, rp.delta, rp.radius, rp.T_min, rp.T_max, ro);
  report["result"] = r.to_json();
  report["pass"] = true;
  write_json(fs::path(rc.output) / "recurrence.json", report);
  return emit(c, report, true);
}

int cmd_plan(const Common& c) {
  RunConfig rc = load(c);
  if (!rc.plan) throw Error(ErrorCode::ConfigError, "config has no 'plan' section");
  VectorField V = build_field(rc.field);
  PlanResult r = plan(V, *rc.plan);
  VerifyReport vr = verify_plan(V, r, std::nullopt, rc.plan->verify_factor);
  const fs::path dir(rc.output);
  write_atomic(dir / "control.json", [&](std::ostream& os) { r.control.write(os); });
  write_atomic(dir / "trajectory.csv", [&](std::ostream& os) { os << r.trajectory.to_csv(); });
  write_json(dir / "certificate.json", r.certificate);
  write_atomic(dir / "plotdata.csv", [&](std::ostream& os) { write_plotdata(os, V, r); });
  write_json(dir / "verify.json", vr.to_json());
  const bool pass = r.ok() && vr.pass;
  json report = {{"pass", pass},
                 {"terminal_error", r.terminal_error},
                 {"sup_u", r.sup_u_sampled},
                 {"T", r.T},
                 {"segments", r.control.segments.size()},
                 {"verify", vr.to_json()}};
  if (!pass) std::cerr << json{{"error", "BudgetExceeded"}, {"message", "plan or verification failed"}, {"details", report}}.dump() << "\n";
  return emit(c, report, pass);
}

int cmd_verify(const Common& c) {
  RunConfig rc = load(c);
  VectorField V = build_field(rc.field);
  const fs::path dir(rc.output);
  std::ifstream cin_(dir / "certificate.json");
  if (!cin_) throw Error(ErrorCode::ConfigError, "no certificate.json in " + dir.string());
  json cert = json::parse(cin_);
  std::ifstream uin(dir / "control.json");
  if (!uin) throw Error(ErrorCode::ConfigError, "no control.json in " + dir.string());
  PlanResult r;
  r.p = vec_from(cert.at("p"));
  r.q = vec_from(cert.at("q"));
  r.epsilon = cert.at("epsilon").get<double>();
  r.terminal_tol = cert.value("terminal_tol", 1e-3);
  r.certificate = cert;
  r.control = ControlSchedule::read(uin);
  if (cert.contains("settings")) {
    const json& s = cert.at("settings").at("design");
    r.design = Settings::with(method_from_name(s.at("method").get<std::string>()), s.at("atol").get<double>());
  }
  r.registry = rebuild_registry(V, cert.value("fields", json::object()));
  VerifyReport vr = verify_plan(V, r, std::nullopt, rc.verify.factor);
  json report = vr.to_json();
  write_json(dir / "verify.json", report);
  if (!vr.pass) {
    json failed = json::array();
    for (auto& [k, v] : vr.checks.items())
      if (!v.get<bool>()) failed.push_back(k);
    std::cerr << json{{"error", "VerificationFailed"}, {"message", "plan failed verification"}, {"details", {{"violated", failed}}}}.dump()
              << "\n";
  }
  return emit(c, report, vr.pass);
}

int cmd_torus(const Common& c) {
  RunConfig rc = load(c);
  if (!rc.torus_connect) throw Error(ErrorCode::ConfigError, "config has no 'torus_connect' section");
  VectorField V = build_field(rc.field);
  const TorusParams& tp = *rc.torus_connect;
  ConnectResult r = connect(V, tp.p, tp.q, tp.epsilon, tp.options);
  const fs::path dir(rc.output);
  write_json(dir / "torus_certificate.json", r.certificate);
  write_atomic(dir / "torus_trajectory.csv", [&](std::ostream& os) { os << r.traj.to_csv(); });
  const bool pass = r.certificate.value("pass", false);
  return emit(c, r.certificate, pass);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steerkit: steering controls for incompressible flows"};
  app.require_subcommand(1);
  Common common;
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Common&);
  };
  const Cmd cmds[] = {
      {"field-check", "divergence, declared bounds and mean-drift audit", cmd_field_check},
      {"correct", "weighted divergence-free correction", cmd_correct},
      {"recurrence", "Poisson-stable point search", cmd_recurrence},
      {"plan", "global steering plan p -> q", cmd_plan},
      {"verify", "re-integrate a plan at finer tolerance", cmd_verify},
      {"torus-connect", "connect two points of a transitive torus flow", cmd_torus},
  };
  int (*chosen)(const Common&) = nullptr;
  for (const Cmd& cmd : cmds) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", common.config, "run config (JSON)")->required();
    sub->add_option("--out", common.out, "output directory (overrides config)");
    sub->add_option("--seed", common.seed, "seed (overrides config)");
    sub->add_flag("--json", common.json_out, "print the report as JSON on stdout");
    sub->callback([&chosen, fn = cmd.fn] { chosen = fn; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    return chosen(common);
  } catch (const Error& e) {
    std::cerr << e.to_json().dump() << "\n";
    return e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << json{{"error", "ConfigError"}, {"message", e.what()}, {"details", json::object()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "InternalError"}, {"message", e.what()}, {"details", json::object()}}.dump() << "\n";
    return 1;
  }
}
