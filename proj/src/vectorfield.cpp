#include "steerkit/vectorfield.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "steerkit/errors.hpp"
#include "steerkit/expression.hpp"

namespace steerkit {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::analytic: return "analytic";
    case Provenance::stream2d: return "stream2d";
    case Provenance::potential3d: return "potential3d";
    case Provenance::corrected: return "corrected";
    case Provenance::pushforward: return "pushforward";
    case Provenance::sampled_grid: return "sampled-grid";
  }
  return "?";
}

bool Box::contains(const Vec& x) const {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x[i] < lo[i] || x[i] > hi[i]) return false;
  return true;
}

VectorField::VectorField(int dim, EvalFn f, JacFn jac, double sup, double lip, Provenance prov, std::string nm)
    : sup_bound(sup), lip_bound(lip), provenance(prov), name(std::move(nm)), dim_(dim), f_(std::move(f)),
      jac_(std::move(jac)) {}

Mat VectorField::jacobian(const Vec& x, double h) const {
  if (jac_) return jac_(x);
  Mat J(dim_, dim_);
  for (int j = 0; j < dim_; ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (f_(xp) - f_(xm)) / (2.0 * h);
  }
  return J;
}

VectorField from_stream_function_2d(const ScalarField& h, double sup_bound, double lip_bound, const std::string& name) {
  if (!h.grad)
    throw Error(ErrorCode::HypothesisViolation, "stream function needs a gradient", {{"field", name}});
  auto grad = h.grad;
  VectorField::EvalFn f = [grad](const Vec& x) {
    Vec g = grad(x);
    return make_vec({g[1], -g[0]});
  };
  VectorField::JacFn jac;
  if (h.hess) {
    auto hess = h.hess;
    jac = [hess](const Vec& x) {
      Mat H = hess(x);
      Mat J(2, 2);
      J << H(0, 1), H(1, 1), -H(0, 0), -H(1, 0);
      return J;
    };
  }
  VectorField V(2, f, jac, sup_bound, lip_bound, Provenance::stream2d, name);
  auto pot = std::make_shared<Potential>();
  pot->dim = 2;
  pot->h = h.value;
  pot->sup = h.sup;
  pot->grad_sup = sup_bound;
  V.potential = pot;
  return V;
}

VectorField from_vector_potential_3d(const VectorPotential& A, double sup_bound, double lip_bound,
                                     const std::string& name) {
  if (!A.jacobian)
    throw Error(ErrorCode::HypothesisViolation, "vector potential needs a Jacobian", {{"field", name}});
  auto dA = A.jacobian;
  VectorField::EvalFn f = [dA](const Vec& x) {
    Mat J = dA(x);  // J(i,j) = dA_i/dx_j
    return make_vec({J(2, 1) - J(1, 2), J(0, 2) - J(2, 0), J(1, 0) - J(0, 1)});
  };
  VectorField V(3, f, nullptr, sup_bound, lip_bound, Provenance::potential3d, name);
  auto pot = std::make_shared<Potential>();
  pot->dim = 3;
  pot->A = A.value;
  pot->dA = A.jacobian;
  pot->sup = A.sup;
  pot->grad_sup = A.jac_sup;
  V.potential = pot;
  return V;
}

namespace {

double param(const std::map<std::string, double>& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

void reject_unknown(const std::map<std::string, double>& p, std::initializer_list<const char*> allowed,
                    const std::string& field) {
  for (const auto& [k, v] : p) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw Error(ErrorCode::ConfigError, "unknown parameter '" + k + "' for field '" + field + "'");
  }
}

VectorField cellular(double a) {
  VectorField::EvalFn f = [a](const Vec& x) {
    double sx, cx, sy, cy;
    ::sincos(x[0], &sx, &cx);
    ::sincos(x[1], &sy, &cy);
    return make_vec({a * sx * cy, -a * cx * sy});
  };
  VectorField::JacFn jac = [a](const Vec& x) {
    double sx, cx, sy, cy;
    ::sincos(x[0], &sx, &cx);
    ::sincos(x[1], &sy, &cy);
    Mat J(2, 2);
    J << a * cx * cy, -a * sx * sy, a * sx * sy, -a * cx * cy;
    return J;
  };
  VectorField V(2, f, jac, std::abs(a), std::abs(a), Provenance::stream2d, "cellular");
  auto pot = std::make_shared<Potential>();
  pot->dim = 2;
  pot->h = [a](const Vec& x) { return a * std::sin(x[0]) * std::sin(x[1]); };
  pot->eval_with_h = [a](const Vec& x, double& h) {
    double sx, cx, sy, cy;
    ::sincos(x[0], &sx, &cx);
    ::sincos(x[1], &sy, &cy);
    h = a * sx * sy;
    return make_vec({a * sx * cy, -a * cx * sy});
  };
  pot->sup = std::abs(a);
  pot->grad_sup = std::abs(a);
  V.potential = pot;
  return V;
}

VectorField rotation(double w, double radius) {
  ScalarField h;
  h.value = [w](const Vec& x) { return 0.5 * w * (x[0] * x[0] + x[1] * x[1]); };
  h.grad = [w](const Vec& x) { return make_vec({w * x[0], w * x[1]}); };
  h.hess = [w](const Vec&) {
    Mat H(2, 2);
    H << w, 0, 0, w;
    return H;
  };
  h.sup = std::isfinite(radius) ? 0.5 * std::abs(w) * radius * radius : kInf;
  double sup = std::isfinite(radius) ? std::abs(w) * radius : kInf;
  VectorField V = from_stream_function_2d(h, sup, std::abs(w), "rotation");
  // Direct evaluation keeps V(y,-x) bitwise free of the gradient detour.
  VectorField R(2, [w](const Vec& x) { return make_vec({w * x[1], -w * x[0]}); }, V.jac_fn(), sup, std::abs(w),
                Provenance::stream2d, "rotation");
  R.potential = V.potential;
  return R;
}

VectorField constant(const Vec& c) {
  int d = static_cast<int>(c.size());
  VectorField V(d, [c](const Vec&) { return c; }, [d](const Vec&) { return Mat(Mat::Zero(d, d)); }, c.norm(), 0.0,
                Provenance::analytic, "constant");
  auto pot = std::make_shared<Potential>();
  pot->dim = d;
  if (d == 2) {
    pot->h = [c](const Vec& x) { return c[0] * x[1] - c[1] * x[0]; };
    pot->grad_sup = c.norm();
  } else if (d == 3) {
    pot->A = [c](const Vec& x) { return make_vec({c[1] * x[2], c[2] * x[0], c[0] * x[1]}); };
    pot->dA = [c](const Vec&) {
      Mat J = Mat::Zero(3, 3);
      J(0, 2) = c[1];
      J(1, 0) = c[2];
      J(2, 1) = c[0];
      return J;
    };
    pot->grad_sup = c.norm();
  }
  pot->sup = c.norm() == 0.0 ? 0.0 : kInf;
  if (d == 2 || d == 3) V.potential = pot;
  return V;
}

VectorField shear(double a) {
  VectorField V(2, [a](const Vec& x) { return make_vec({a * std::sin(x[1]), 0.0}); },
                [a](const Vec& x) {
                  Mat J(2, 2);
                  J << 0.0, a * std::cos(x[1]), 0.0, 0.0;
                  return J;
                },
                std::abs(a), std::abs(a), Provenance::stream2d, "shear");
  auto pot = std::make_shared<Potential>();
  pot->dim = 2;
  pot->h = [a](const Vec& x) { return -a * std::cos(x[1]); };
  pot->sup = std::abs(a);
  pot->grad_sup = std::abs(a);
  V.potential = pot;
  return V;
}

VectorField abc(double A, double B, double C) {
  auto f = [A, B, C](const Vec& x) {
    return make_vec({A * std::sin(x[2]) + C * std::cos(x[1]), B * std::sin(x[0]) + A * std::cos(x[2]),
                     C * std::sin(x[1]) + B * std::cos(x[0])});
  };
  auto jac = [A, B, C](const Vec& x) {
    Mat J(3, 3);
    J << 0.0, -C * std::sin(x[1]), A * std::cos(x[2]), B * std::cos(x[0]), 0.0, -A * std::sin(x[2]),
        -B * std::sin(x[0]), C * std::cos(x[1]), 0.0;
    return J;
  };
  double sup = std::abs(A) + std::abs(B) + std::abs(C);
  double lip = std::sqrt(2.0 * (A * A + B * B + C * C));
  // Beltrami flow: curl V = V, so V is its own vector potential.
  VectorPotential pot{f, jac, sup, lip};
  VectorField V = from_vector_potential_3d(pot, sup, lip, "abc");
  VectorField W(3, f, jac, sup, lip, Provenance::potential3d, "abc");
  W.potential = V.potential;
  return W;
}

}  // namespace

VectorField builtin_field(const std::string& name, const std::map<std::string, double>& p, int dim) {
  if (name == "cellular") {
    reject_unknown(p, {"amplitude"}, name);
    return cellular(param(p, "amplitude", 1.0));
  }
  if (name == "rotation") {
    reject_unknown(p, {"omega", "radius"}, name);
    return rotation(param(p, "omega", 1.0), param(p, "radius", kInf));
  }
  if (name == "constant") {
    reject_unknown(p, {"c1", "c2", "c3"}, name);
    Vec c(dim);
    for (int i = 0; i < dim; ++i) c[i] = param(p, "c" + std::to_string(i + 1), 0.0);
    return constant(c);
  }
  if (name == "shear") {
    reject_unknown(p, {"amplitude"}, name);
    return shear(param(p, "amplitude", 1.0));
  }
  if (name == "abc") {
    reject_unknown(p, {"A", "B", "C"}, name);
    return abc(param(p, "A", 1.0), param(p, "B", 1.0), param(p, "C", 1.0));
  }
  throw Error(ErrorCode::ConfigError, "unknown builtin field '" + name + "'");
}

VectorField expression_field(const std::vector<std::string>& comps, const std::map<std::string, double>& params,
                             double sup, double lip) {
  if (comps.empty() || static_cast<int>(comps.size()) > kMaxDim)
    throw Error(ErrorCode::ConfigError, "expression field needs 1..4 components");
  std::vector<Expression> ex;
  int d = static_cast<int>(comps.size());
  for (const auto& s : comps) {
    ex.push_back(Expression::parse(s, params));
    if (ex.back().max_variable() >= d)
      throw Error(ErrorCode::ConfigError, "expression '" + s + "' uses a variable beyond dimension " +
                                              std::to_string(d));
  }
  return VectorField(d,
                     [ex](const Vec& x) {
                       Vec out(static_cast<Eigen::Index>(ex.size()));
                       for (size_t i = 0; i < ex.size(); ++i) out[static_cast<Eigen::Index>(i)] = ex[i](x.data());
                       return out;
                     },
                     nullptr, sup, lip, Provenance::analytic, "expression");
}

VectorField grid_field(const GridData& g, double sup, double lip) {
  int d = g.box.dim();
  if (static_cast<int>(g.n.size()) != d) throw Error(ErrorCode::ConfigError, "grid: node counts do not match box");
  size_t nodes = 1;
  for (int k : g.n) {
    if (k < 2) throw Error(ErrorCode::ConfigError, "grid: need at least 2 nodes per axis");
    nodes *= static_cast<size_t>(k);
  }
  if (g.values.size() != nodes * static_cast<size_t>(d))
    throw Error(ErrorCode::ConfigError, "grid: expected " + std::to_string(nodes * d) + " values, got " +
                                            std::to_string(g.values.size()));
  auto data = std::make_shared<GridData>(g);
  return VectorField(d,
                     [data, d, nodes](const Vec& x) {
                       const GridData& G = *data;
                       int base[kMaxDim];
                       double w[kMaxDim];
                       for (int a = 0; a < d; ++a) {
                         double h = (G.box.hi[a] - G.box.lo[a]) / (G.n[a] - 1);
                         double s = (std::clamp(x[a], G.box.lo[a], G.box.hi[a]) - G.box.lo[a]) / h;
                         int i = std::min(static_cast<int>(std::floor(s)), G.n[a] - 2);
                         base[a] = i;
                         w[a] = s - i;
                       }
                       Vec out = Vec::Zero(d);
                       for (int corner = 0; corner < (1 << d); ++corner) {
                         double wt = 1.0;
                         size_t flat = 0;
                         for (int a = 0; a < d; ++a) {
                           int bit = (corner >> a) & 1;
                           wt *= bit ? w[a] : 1.0 - w[a];
                           flat = flat * static_cast<size_t>(G.n[a]) + static_cast<size_t>(base[a] + bit);
                         }
                         for (int c = 0; c < d; ++c) out[c] += wt * G.values[c * nodes + flat];
                       }
                       return out;
                     },
                     nullptr, sup, lip, Provenance::sampled_grid, "grid");
}

VectorField build_field(const FieldSpec& s) {
  VectorField V;
  switch (s.kind) {
    case FieldSpec::Kind::builtin: V = builtin_field(s.name, s.params, s.dim); break;
    case FieldSpec::Kind::expression: V = expression_field(s.expressions, s.params); break;
    case FieldSpec::Kind::grid:
      if (!s.grid) throw Error(ErrorCode::ConfigError, "grid field without grid data");
      V = grid_field(*s.grid);
      break;
  }
  if (s.sup_bound) V.sup_bound = *s.sup_bound;
  if (s.lip_bound) V.lip_bound = *s.lip_bound;
  if (s.period) V.period = *s.period;
  return V;
}

// ---------------------------------------------------------------- estimators

double estimate_divergence(const VectorField& V, const Vec& x, double h) {
  double div = 0.0;
  for (int i = 0; i < V.dim(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    div += (V(xp)[i] - V(xm)[i]) / (2.0 * h);
  }
  return div;
}

namespace {

// Portable uniform draw in [0,1) from a 64-bit engine.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Vec sample_box(std::mt19937_64& rng, const Box& b) {
  Vec x(b.dim());
  for (int i = 0; i < b.dim(); ++i) x[i] = b.lo[i] + unit(rng) * (b.hi[i] - b.lo[i]);
  return x;
}

}  // namespace

NormEstimate estimate_norms(const VectorField& V, const Box& region, int n_samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NormEstimate est;
  const double fd = 1e-6 * std::max(region.diameter(), 1e-12);
  Vec prev, fprev;
  for (int k = 0; k < n_samples; ++k) {
    Vec x = sample_box(rng, region);
    Vec u(V.dim());
    for (int i = 0; i < V.dim(); ++i) u[i] = 2.0 * unit(rng) - 1.0;
    if (u.norm() == 0.0) u[0] = 1.0;
    u.normalize();
    Vec fx = V(x);
    est.sup = std::max(est.sup, fx.norm());
    Vec xp = x + 0.5 * fd * u, xm = x - 0.5 * fd * u;
    est.lip = std::max(est.lip, (V(xp) - V(xm)).norm() / fd);
    if (k > 0) {
      double dist = (x - prev).norm();
      if (dist > 0.0) est.lip = std::max(est.lip, (fx - fprev).norm() / dist);
    }
    prev = x;
    fprev = fx;
  }
  return est;
}

void audit_declared_bounds(const VectorField& V, const Box& region, int n_samples, std::uint64_t seed) {
  NormEstimate e = estimate_norms(V, region, n_samples, seed);
  if (e.sup > V.sup_bound * (1.0 + 1e-9))
    throw Error(ErrorCode::HypothesisViolation, "sampled sup exceeds the declared sup bound",
                {{"sampled", e.sup}, {"declared", V.sup_bound}});
  // Difference quotients carry O(h^2) truncation; allow a relative 1e-6.
  if (e.lip > V.lip_bound * (1.0 + 1e-6) + 1e-9)
    throw Error(ErrorCode::HypothesisViolation, "sampled Lipschitz ratio exceeds the declared bound",
                {{"sampled", e.lip}, {"declared", V.lip_bound}});
}

double mean_drift(const VectorField& V, double ell, const std::vector<Vec>& anchors, int res) {
  if (anchors.empty()) throw Error(ErrorCode::HypothesisViolation, "mean_drift needs at least one anchor");
  if (!(ell > 0.0) || res < 1) throw Error(ErrorCode::HypothesisViolation, "mean_drift needs ell > 0 and resolution >= 1");
  const int d = V.dim();
  long total = 1;
  for (int i = 0; i < d; ++i) total *= res;
  double worst = 0.0;
  for (const Vec& a : anchors) {
    Vec sum = Vec::Zero(d);
    Vec y(d);
    for (long flat = 0; flat < total; ++flat) {
      long r = flat;
      for (int i = d - 1; i >= 0; --i) {
        y[i] = a[i] + (static_cast<double>(r % res) + 0.5) * ell / res;
        r /= res;
      }
      sum += V(y);
    }
    worst = std::max(worst, (sum / static_cast<double>(total)).norm());
  }
  return worst;
}

const char* verdict_name(DriftVerdict v) {
  switch (v) {
    case DriftVerdict::vanishing: return "vanishing";
    case DriftVerdict::nonvanishing: return "nonvanishing";
    case DriftVerdict::inconclusive: return "inconclusive";
  }
  return "?";
}

nlohmann::json DriftReport::to_json() const {
  nlohmann::json pairs = nlohmann::json::array();
  for (size_t i = 0; i < box_sizes.size(); ++i) pairs.push_back({{"l", box_sizes[i]}, {"drift", drifts[i]}});
  return {{"drifts", pairs}, {"anchors_used", anchors_used}, {"threshold", threshold},
          {"verdict", verdict_name(verdict)}};
}

std::vector<Vec> default_anchors(int dim) {
  const double offs[] = {0.0, 2.5, 5.0, 7.5};
  std::vector<Vec> out;
  long total = 1;
  for (int i = 0; i < dim; ++i) total *= 4;
  for (long flat = 0; flat < total; ++flat) {
    Vec a(dim);
    long r = flat;
    for (int i = dim - 1; i >= 0; --i) {
      a[i] = offs[r % 4];
      r /= 4;
    }
    out.push_back(a);
  }
  return out;
}

DriftReport check_vmd(const VectorField& V, const std::vector<double>& ells, double threshold,
                      const std::vector<Vec>& anchors_in, int res, double slack) {
  if (ells.empty()) throw Error(ErrorCode::ConfigError, "VMD schedule is empty");
  for (size_t i = 1; i < ells.size(); ++i)
    if (!(ells[i] > ells[i - 1])) throw Error(ErrorCode::ConfigError, "VMD schedule must be increasing");
  std::vector<Vec> anchors = anchors_in.empty() ? default_anchors(V.dim()) : anchors_in;
  DriftReport r;
  r.box_sizes = ells;
  r.anchors_used = static_cast<int>(anchors.size());
  r.threshold = threshold;
  for (double l : ells) r.drifts.push_back(mean_drift(V, l, anchors, res));
  // Drifts at roundoff level are compared as zero.
  constexpr double floor = 1e-12;
  bool monotone = true;
  for (size_t i = 1; i < r.drifts.size(); ++i)
    if (r.drifts[i] > std::max((1.0 + slack) * r.drifts[i - 1], floor)) monotone = false;
  bool all_above = std::all_of(r.drifts.begin(), r.drifts.end(), [&](double x) { return x >= threshold; });
  if (r.drifts.back() < threshold && monotone) r.verdict = DriftVerdict::vanishing;
  else if (all_above) r.verdict = DriftVerdict::nonvanishing;
  else r.verdict = DriftVerdict::inconclusive;
  return r;
}

double halton(std::uint64_t index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % static_cast<std::uint64_t>(base));
    index /= static_cast<std::uint64_t>(base);
  }
  return r;
}

Vec halton_point(std::uint64_t index, int dim) {
  static const int primes[] = {2, 3, 5, 7, 11};
  Vec u(dim);
  for (int i = 0; i < dim; ++i) u[i] = halton(index, primes[i]);
  return u;
}

Vec halton_in_ball(std::uint64_t index, const Vec& c, double r) {
  const int d = static_cast<int>(c.size());
  Vec u = halton_point(index, std::max(d, 2));
  Vec x = c;
  if (d == 1) {
    x[0] += r * (2.0 * u[0] - 1.0);
  } else if (d == 2) {
    double rad = r * std::sqrt(u[0]);
    double th = 2.0 * std::numbers::pi * u[1];
    x[0] += rad * std::cos(th);
    x[1] += rad * std::sin(th);
  } else {
    double rad = r * std::cbrt(u[0]);
    double z = 2.0 * u[1] - 1.0;
    double ph = 2.0 * std::numbers::pi * u[2];
    double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    x[0] += rad * s * std::cos(ph);
    x[1] += rad * s * std::sin(ph);
    x[2] += rad * z;
  }
  return x;
}

}  // namespace steerkit
