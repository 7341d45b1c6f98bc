#include "steerkit/correct_field.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "steerkit/json_util.hpp"
#include "steerkit/recurrence.hpp"

namespace steerkit {

PsiWeight::PsiWeight(int dim, double p, double alpha) : dim_(dim), p_(p), alpha_(alpha) {
  const double lo = (dim - 1) / 2.0, hi = dim / 2.0;
  if (!(p > lo && p < hi))
    throw Error(ErrorCode::HypothesisViolation, "weight exponent outside ((d-1)/2, d/2)",
                {{"p", p}, {"lower", lo}, {"upper", hi}});
  if (!(alpha > 0.0)) throw Error(ErrorCode::HypothesisViolation, "weight alpha must be positive", {{"alpha", alpha}});
}

PsiWeight PsiWeight::midpoint(int dim, double alpha) { return PsiWeight(dim, (2.0 * dim - 1.0) / 4.0, alpha); }

double PsiWeight::operator()(const Vec& x) const { return std::pow(x.squaredNorm() + alpha_ * alpha_, -p_); }

Vec PsiWeight::grad(const Vec& x) const {
  double s = x.squaredNorm() + alpha_ * alpha_;
  return (-2.0 * p_ * std::pow(s, -p_ - 1.0)) * x;
}

Vec PsiWeight::grad_log(const Vec& x) const { return (-2.0 * p_ / (x.squaredNorm() + alpha_ * alpha_)) * x; }

nlohmann::json PsiWeight::to_json() const { return {{"dim", dim_}, {"p", p_}, {"alpha", alpha_}}; }

double psi_eval(const PsiWeight& w, const Vec& x) { return w(x); }
Vec grad_psi(const PsiWeight& w, const Vec& x) { return w.grad(x); }

const char* correction_method_name(CorrectionMethod m) { return m == CorrectionMethod::stream ? "stream" : "poisson"; }

CorrectionMethod correction_method_from_name(const std::string& s) {
  if (s == "poisson") return CorrectionMethod::poisson;
  if (s == "stream") return CorrectionMethod::stream;
  throw Error(ErrorCode::ConfigError, "unknown correction method '" + s + "'");
}

nlohmann::json CorrectionResult::to_json() const {
  nlohmann::json j = {{"method", correction_method_name(method)},
                      {"weight", weight.to_json()},
                      {"sup_delta", sup_delta},
                      {"sup_delta_bound", num_json(sup_delta_bound)},
                      {"div_residual", div_residual},
                      {"div_tilde_sup", div_tilde_sup},
                      {"lip_estimate", lip_estimate},
                      {"alpha_used", alpha_used},
                      {"alpha_history", alpha_history},
                      {"sup_delta_history", sup_delta_history},
                      {"grid", grid_meta}};
  j["failure"] = failure ? nlohmann::json(error_name(*failure)) : nlohmann::json(nullptr);
  return j;
}

std::vector<Vec> audit_grid(const Box& roi, int n) {
  const int d = roi.dim();
  std::vector<Vec> pts;
  Vec lo = roi.lo + 0.05 * (roi.hi - roi.lo), hi = roi.hi - 0.05 * (roi.hi - roi.lo);
  long total = 1;
  for (int i = 0; i < d; ++i) total *= n;
  pts.reserve(static_cast<size_t>(total));
  for (long k = 0; k < total; ++k) {
    Vec x(d);
    long r = k;
    for (int i = 0; i < d; ++i) {
      int idx = static_cast<int>(r % n);
      r /= n;
      x[i] = lo[i] + (hi[i] - lo[i]) * (n == 1 ? 0.5 : static_cast<double>(idx) / (n - 1));
    }
    pts.push_back(x);
  }
  return pts;
}

double check_weighted_divfree(const VectorField& F, const PsiWeight& w, const std::vector<Vec>& points, double h) {
  double worst = 0.0;
  const int d = F.dim();
  for (const Vec& x : points) {
    double div = 0.0;
    for (int i = 0; i < d; ++i) {
      Vec e = Vec::Zero(d);
      e[i] = h;
      Vec xp = x + e, xm = x - e;
      div += (w(xp) * F(xp)[i] - w(xm) * F(xm)[i]) / (2.0 * h);
    }
    worst = std::max(worst, std::abs(div));
  }
  return worst;
}

namespace {

double glue(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }

// 1 on the ROI, smooth decay to 0 over 80% of the padding.
struct Window {
  Vec lo, hi, pad;
  double operator()(const Vec& x) const {
    double w = 1.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double out = std::max(lo[i] - x[i], x[i] - hi[i]);
      if (out <= 0.0) continue;
      double s = out / (0.8 * pad[i]);
      if (s >= 1.0) return 0.0;
      double a = glue(1.0 - s), b = glue(s);
      w *= a / (a + b);
    }
    return w;
  }
};

// Nodes 0..N per axis on [lo, hi]; G holds chi grad h / psi per component.
struct PoissonGrid {
  int d = 2, N = 0;
  Vec lo, hi, dx;
  std::vector<std::vector<double>> G;

  long nodes() const {
    long n = 1;
    for (int i = 0; i < d; ++i) n *= (N + 1);
    return n;
  }

  Vec interp(const Vec& x, bool& inside) const {
    Vec out = Vec::Zero(d);
    std::array<int, kMaxDim> base{};
    std::array<std::array<double, 6>, kMaxDim> wts{};
    inside = true;
    for (int i = 0; i < d; ++i) {
      double u = (x[i] - lo[i]) / dx[i];
      if (!(u >= 0.0 && u <= N)) {
        inside = false;
        return out;
      }
      int i0 = std::min(static_cast<int>(std::floor(u)), N - 1);
      double t = u - i0;
      base[i] = i0;
      for (int o = -2; o <= 3; ++o) {
        double L = 1.0;
        for (int m = -2; m <= 3; ++m)
          if (m != o) L *= (t - m) / static_cast<double>(o - m);
        wts[i][o + 2] = L;
      }
    }
    int combos = 1;
    for (int i = 0; i < d; ++i) combos *= 6;
    for (int c = 0; c < combos; ++c) {
      int r = c;
      long flat = 0;
      double w = 1.0;
      bool valid = true;
      for (int i = 0; i < d; ++i) {
        int o = r % 6;
        r /= 6;
        int j = base[i] + o - 2;
        if (j < 0 || j > N) {
          valid = false;
          break;
        }
        flat = flat * (N + 1) + j;
        w *= wts[i][o];
      }
      if (!valid) continue;
      for (int k = 0; k < d; ++k) out[k] += w * G[k][flat];
    }
    return out;
  }
};

// Solves Lap h = -window * grad psi . V on the padded box with the sine basis
// and returns chi grad h / psi at the nodes.
std::shared_ptr<PoissonGrid> poisson_solve(const VectorField& V, const PsiWeight& w, const Box& box,
                                           const Window& win, int N) {
  auto g = std::make_shared<PoissonGrid>();
  const int d = V.dim();
  g->d = d;
  g->N = N;
  g->lo = box.lo;
  g->hi = box.hi;
  g->dx = (box.hi - box.lo) / N;
  const int n = N - 1;
  long interior = 1;
  for (int i = 0; i < d; ++i) interior *= n;

  auto coords_interior = [&](long flat, std::array<int, kMaxDim>& idx) {
    for (int i = d - 1; i >= 0; --i) {
      idx[i] = static_cast<int>(flat % n);
      flat /= n;
    }
  };

  double* buf = fftw_alloc_real(static_cast<size_t>(interior));
  for (long k = 0; k < interior; ++k) {
    std::array<int, kMaxDim> idx{};
    coords_interior(k, idx);
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = box.lo[i] + (idx[i] + 1) * g->dx[i];
    double wv = win(x);
    buf[k] = wv == 0.0 ? 0.0 : -wv * w.grad(x).dot(V(x));
  }
  std::array<int, kMaxDim> dims{};
  std::array<fftw_r2r_kind, kMaxDim> kinds{};
  for (int i = 0; i < d; ++i) {
    dims[i] = n;
    kinds[i] = FFTW_RODFT00;
  }
  fftw_plan plan = fftw_plan_r2r(d, dims.data(), buf, buf, kinds.data(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);

  // Spectral coefficients of h: c = Y / N^d, h_hat = -c / lambda.
  const double norm = std::pow(static_cast<double>(N), d);
  std::vector<double> hhat(static_cast<size_t>(interior));
  for (long k = 0; k < interior; ++k) {
    std::array<int, kMaxDim> idx{};
    coords_interior(k, idx);
    double lam = 0.0;
    for (int i = 0; i < d; ++i) {
      double kk = (idx[i] + 1) * M_PI / (box.hi[i] - box.lo[i]);
      lam += kk * kk;
    }
    hhat[static_cast<size_t>(k)] = -(buf[k] / norm) / lam;
  }
  fftw_free(buf);

  g->G.assign(d, std::vector<double>(static_cast<size_t>(g->nodes()), 0.0));
  for (int a = 0; a < d; ++a) {
    // Axis a carries N+1 cosine nodes, the others N-1 sine nodes.
    std::array<int, kMaxDim> ad{};
    long total = 1;
    for (int i = 0; i < d; ++i) {
      ad[i] = i == a ? N + 1 : n;
      kinds[i] = i == a ? FFTW_REDFT00 : FFTW_RODFT00;
      total *= ad[i];
    }
    double* b = fftw_alloc_real(static_cast<size_t>(total));
    std::fill(b, b + total, 0.0);
    for (long k = 0; k < interior; ++k) {
      std::array<int, kMaxDim> idx{};
      coords_interior(k, idx);
      long flat = 0;
      for (int i = 0; i < d; ++i) flat = flat * ad[i] + (i == a ? idx[i] + 1 : idx[i]);
      b[flat] = hhat[static_cast<size_t>(k)] * (idx[a] + 1) * M_PI / (box.hi[a] - box.lo[a]);
    }
    fftw_plan p2 = fftw_plan_r2r(d, ad.data(), b, b, kinds.data(), FFTW_ESTIMATE);
    fftw_execute(p2);
    fftw_destroy_plan(p2);
    const double syn = std::pow(2.0, d);
    for (long k = 0; k < total; ++k) {
      std::array<int, kMaxDim> idx{};
      long r = k;
      for (int i = d - 1; i >= 0; --i) {
        idx[i] = static_cast<int>(r % ad[i]);
        r /= ad[i];
      }
      long node = 0;
      Vec x(d);
      for (int i = 0; i < d; ++i) {
        int j = i == a ? idx[i] : idx[i] + 1;
        node = node * (N + 1) + j;
        x[i] = box.lo[i] + j * g->dx[i];
      }
      double chi = win(x);
      g->G[a][static_cast<size_t>(node)] = chi == 0.0 ? 0.0 : chi * (b[k] / syn) / w(x);
    }
    fftw_free(b);
  }
  return g;
}

double sampled_sup_delta(const VectorField& V, const VectorField& Vt, const Box& region, int n, std::uint64_t seed,
                         const std::vector<Vec>& extra) {
  double m = 0.0;
  const int d = V.dim();
  for (int i = 0; i < n; ++i) {
    Vec u = halton_point(1 + seed * 100003ULL + static_cast<std::uint64_t>(i), d);
    Vec x = region.lo + u.cwiseProduct(region.hi - region.lo);
    m = std::max(m, (Vt(x) - V(x)).norm());
  }
  for (const Vec& x : extra) m = std::max(m, (Vt(x) - V(x)).norm());
  return m;
}

double sampled_div_sup(const VectorField& F, const std::vector<Vec>& pts, double h) {
  double m = 0.0;
  for (const Vec& x : pts) m = std::max(m, std::abs(estimate_divergence(F, x, h)));
  return m;
}

VectorField stream_corrected(const VectorField& V, const PsiWeight& w, double bound) {
  const auto& pot = V.potential;
  const double p = w.p(), al = w.alpha();
  VectorField::EvalFn f;
  double lip;
  if (V.dim() == 2) {
    if (pot->eval_with_h) {
      auto fused = pot->eval_with_h;
      f = [fused, p, al](const Vec& x) {
        double h;
        Vec v = fused(x, h);
        double c = 2.0 * p * h / (x[0] * x[0] + x[1] * x[1] + al * al);
        v[0] -= c * x[1];
        v[1] += c * x[0];
        return v;
      };
    } else {
      auto Vf = V.eval_fn();
      auto hf = pot->h;
      f = [Vf, hf, p, al](const Vec& x) {
        Vec v = Vf(x);
        double c = 2.0 * p * hf(x) / (x[0] * x[0] + x[1] * x[1] + al * al);
        v[0] -= c * x[1];
        v[1] += c * x[0];
        return v;
      };
    }
    lip = V.lip_bound + V.sup_bound * p / al + pot->sup * 2.0 * p / (al * al);
  } else {
    auto Vf = V.eval_fn();
    auto A = pot->A;
    f = [Vf, A, w](const Vec& x) {
      Vec g = w.grad_log(x);
      Vec a = A(x);
      Vec v = Vf(x);
      v[0] += g[1] * a[2] - g[2] * a[1];
      v[1] += g[2] * a[0] - g[0] * a[2];
      v[2] += g[0] * a[1] - g[1] * a[0];
      return v;
    };
    lip = V.lip_bound + pot->grad_sup * p / al + pot->sup * 2.0 * p / (al * al);
  }
  VectorField W(V.dim(), f, nullptr, V.sup_bound + bound, lip, Provenance::corrected, V.name + "~");
  return W;
}

}  // namespace

CorrectionResult correct(const VectorField& V, double eps, const CorrectionSettings& s) {
  const int d = V.dim();
  if (!(eps > 0.0)) throw Error(ErrorCode::HypothesisViolation, "epsilon must be positive");
  if (s.roi.dim() != d || !((s.roi.hi - s.roi.lo).minCoeff() > 0.0))
    throw Error(ErrorCode::ConfigError, "correction needs a nondegenerate region of interest of matching dimension");
  const std::vector<Vec> grid = audit_grid(s.roi, s.audit_resolution);
  double div_in = sampled_div_sup(V, grid, s.fd_step);
  if (!(div_in <= 1e-6))
    throw Error(ErrorCode::HypothesisViolation, "input field is not divergence free", {{"max_divergence", div_in}});

  CorrectionResult res;
  res.method = s.method;
  const double p = s.p > 0.0 ? s.p : (2.0 * d - 1.0) / 4.0;
  double alpha = s.alpha0 > 0.0 ? s.alpha0 : s.roi.diameter();
  const Vec width = s.roi.hi - s.roi.lo;
  const Vec pad = 0.25 * width;
  const Box box{s.roi.lo - pad, s.roi.hi + pad};
  const Window win{s.roi.lo, s.roi.hi, pad};

  if (s.method == CorrectionMethod::stream) {
    if (!V.potential || !std::isfinite(V.potential->sup) || (d == 2 && !V.potential->h) || (d == 3 && !V.potential->A))
      throw Error(ErrorCode::ConfigError, "stream correction needs a stream function or vector potential with finite sup");
  }

  for (int k = 0; k <= s.max_doublings; ++k, alpha *= 2.0) {
    PsiWeight w(d, p, alpha);
    VectorField Vt;
    double bound = kInf;
    if (s.method == CorrectionMethod::stream) {
      bound = V.potential->sup * p / alpha;
      Vt = stream_corrected(V, w, bound);
      res.grid_meta = {{"kind", "analytic"}};
    } else {
      if (s.resolution < 8) throw Error(ErrorCode::ConfigError, "poisson resolution must be at least 8");
      auto g = poisson_solve(V, w, box, win, s.resolution);
      auto Vf = V.eval_fn();
      Vt = VectorField(
          d,
          [Vf, g](const Vec& x) {
            bool inside;
            Vec c = g->interp(x, inside);
            return inside ? Vec(Vf(x) + c) : Vf(x);
          },
          nullptr, kInf, kInf, Provenance::corrected, V.name + "~");
      res.grid_meta = {{"kind", "sine-spectral"},
                       {"intervals", s.resolution},
                       {"box_lo", vec_json(box.lo)},
                       {"box_hi", vec_json(box.hi)},
                       {"spacing", vec_json(g->dx)},
                       {"interpolation", "6-point tensor Lagrange"}};
    }
    double sd = sampled_sup_delta(V, Vt, s.method == CorrectionMethod::stream ? s.roi : box, s.audit_samples, s.seed,
                                  grid);
    res.alpha_history.push_back(alpha);
    res.sup_delta_history.push_back(sd);
    const bool below = s.method == CorrectionMethod::stream ? bound < eps : sd < eps;
    if (below || k == s.max_doublings) {
      res.field = Vt;
      res.weight = w;
      res.alpha_used = alpha;
      res.sup_delta = sd;
      res.sup_delta_bound = bound;
      break;
    }
  }

  VectorField& Vt = res.field;
  if (s.method == CorrectionMethod::poisson) {
    Vt.sup_bound = V.sup_bound + 1.05 * res.sup_delta;
    VectorField diff(d, [Vt, V](const Vec& x) { return Vec(Vt(x) - V(x)); }, nullptr, kInf, kInf,
                     Provenance::corrected);
    res.lip_estimate = estimate_norms(diff, box, 2000, s.seed).lip;
    Vt.lip_bound = V.lip_bound + 1.05 * res.lip_estimate;
  } else {
    VectorField diff(d, [Vt, V](const Vec& x) { return Vec(Vt(x) - V(x)); }, nullptr, kInf, kInf,
                     Provenance::corrected);
    res.lip_estimate = estimate_norms(diff, s.roi, 2000, s.seed).lip;
  }
  res.div_residual = check_weighted_divfree(Vt, res.weight, grid, s.fd_step);
  res.div_tilde_sup = sampled_div_sup(Vt, grid, s.fd_step);

  auto fail = [&](ErrorCode c, const std::string& msg, nlohmann::json det) {
    if (s.strict) throw Error(c, msg, std::move(det));
    if (!res.failure) res.failure = c;
  };
  if (!(res.sup_delta < eps))
    fail(ErrorCode::EpsilonUnreachable, "alpha cap reached with deviation not below epsilon",
         {{"sup_delta", res.sup_delta}, {"eps", eps}, {"alpha", res.alpha_used}});
  if (!(res.div_residual <= s.residual_tol))
    fail(ErrorCode::ResidualTooLarge, "weighted divergence residual above tolerance",
         {{"residual", res.div_residual}, {"tolerance", s.residual_tol}, {"resolution", s.resolution}});
  return res;
}

nlohmann::json certify_proposition(const VectorField& V, const CorrectionResult& r, double eps, const Box& roi,
                                   const CertifyOptions& opt) {
  (void)V;
  Box b = opt.box ? *opt.box : roi;
  double frac = nonwandering_fraction(r.field, b, opt.n_points, opt.radius, opt.T_max, opt.seed);
  nlohmann::json j;
  j["i_nonwandering"] = {{"fraction", frac},
                         {"threshold", 0.9},
                         {"pass", frac >= 0.9},
                         {"label", "statistical proxy"},
                         {"box_lo", vec_json(b.lo)},
                         {"box_hi", vec_json(b.hi)},
                         {"radius", opt.radius},
                         {"T_max", opt.T_max}};
  j["ii_sup_delta"] = {{"value", r.sup_delta}, {"eps", eps}, {"pass", r.sup_delta < eps}};
  j["iii_div_tilde"] = {{"value", r.div_tilde_sup}, {"eps", eps}, {"pass", r.div_tilde_sup < eps}};
  j["iv_weighted_div"] = {{"value", r.div_residual}, {"pass", !r.failure || *r.failure != ErrorCode::ResidualTooLarge}};
  j["failure"] = r.failure ? nlohmann::json(error_name(*r.failure)) : nlohmann::json(nullptr);
  j["pass"] = j["i_nonwandering"]["pass"].get<bool>() && j["ii_sup_delta"]["pass"].get<bool>() &&
              j["iii_div_tilde"]["pass"].get<bool>() && j["iv_weighted_div"]["pass"].get<bool>();
  return j;
}

}  // namespace steerkit
