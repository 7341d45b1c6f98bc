#include "steerkit/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "steerkit/errors.hpp"

namespace steerkit {

namespace {

// Dormand-Prince 5(4).
namespace dp5 {
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dp5

// Dormand-Prince 8(5,3).
namespace dop853 {
constexpr double c2 = 0.526001519587677318785587544488e-01;
constexpr double c3 = 0.789002279381515978178381316732e-01;
constexpr double c4 = 0.118350341907227396726757197510e+00;
constexpr double c5 = 0.281649658092772603273242802490e+00;
constexpr double c6 = 0.333333333333333333333333333333e+00;
constexpr double c7 = 0.25e+00;
constexpr double c8 = 0.307692307692307692307692307692e+00;
constexpr double c9 = 0.651282051282051282051282051282e+00;
constexpr double c10 = 0.6e+00;
constexpr double c11 = 0.857142857142857142857142857142e+00;
constexpr double a21 = 5.26001519587677318785587544488e-2;
constexpr double a31 = 1.97250569845378994544595329183e-2;
constexpr double a32 = 5.91751709536136983633785987549e-2;
constexpr double a41 = 2.95875854768068491816892993775e-2;
constexpr double a43 = 8.87627564304205475450678981324e-2;
constexpr double a51 = 2.41365134159266685502369798665e-1;
constexpr double a53 = -8.84549479328286085344864962717e-1;
constexpr double a54 = 9.24834003261792003115737966543e-1;
constexpr double a61 = 3.7037037037037037037037037037e-2;
constexpr double a64 = 1.70828608729473871279604482173e-1;
constexpr double a65 = 1.25467687566822425016691814123e-1;
constexpr double a71 = 3.7109375e-2;
constexpr double a74 = 1.70252211019544039314978060272e-1;
constexpr double a75 = 6.02165389804559606850219397283e-2;
constexpr double a76 = -1.7578125e-2;
constexpr double a81 = 3.70920001185047927108779319836e-2;
constexpr double a84 = 1.70383925712239993810214054705e-1;
constexpr double a85 = 1.07262030446373284651809199168e-1;
constexpr double a86 = -1.53194377486244017527936158236e-2;
constexpr double a87 = 8.27378916381402288758473766002e-3;
constexpr double a91 = 6.24110958716075717114429577812e-1;
constexpr double a94 = -3.36089262944694129406857109825e0;
constexpr double a95 = -8.68219346841726006818189891453e-1;
constexpr double a96 = 2.75920996994467083049415600797e1;
constexpr double a97 = 2.01540675504778934086186788979e1;
constexpr double a98 = -4.34898841810699588477366255144e1;
constexpr double a101 = 4.77662536438264365890433908527e-1;
constexpr double a104 = -2.48811461997166764192642586468e0;
constexpr double a105 = -5.90290826836842996371446475743e-1;
constexpr double a106 = 2.12300514481811942347288949897e1;
constexpr double a107 = 1.52792336328824235832596922938e1;
constexpr double a108 = -3.32882109689848629194453265587e1;
constexpr double a109 = -2.03312017085086261358222928593e-2;
constexpr double a111 = -9.3714243008598732571704021658e-1;
constexpr double a114 = 5.18637242884406370830023853209e0;
constexpr double a115 = 1.09143734899672957818500254654e0;
constexpr double a116 = -8.14978701074692612513997267357e0;
constexpr double a117 = -1.85200656599969598641566180701e1;
constexpr double a118 = 2.27394870993505042818970056734e1;
constexpr double a119 = 2.49360555267965238987089396762e0;
constexpr double a1110 = -3.0467644718982195003823669022e0;
constexpr double a121 = 2.27331014751653820792359768449e0;
constexpr double a124 = -1.05344954667372501984066689879e1;
constexpr double a125 = -2.00087205822486249909675718444e0;
constexpr double a126 = -1.79589318631187989172765950534e1;
constexpr double a127 = 2.79488845294199600508499808837e1;
constexpr double a128 = -2.85899827713502369474065508674e0;
constexpr double a129 = -8.87285693353062954433549289258e0;
constexpr double a1210 = 1.23605671757943030647266201528e1;
constexpr double a1211 = 6.43392746015763530355970484046e-1;
constexpr double b1 = 5.42937341165687622380535766363e-2;
constexpr double b6 = 4.45031289275240888144113950566e0;
constexpr double b7 = 1.89151789931450038304281599044e0;
constexpr double b8 = -5.8012039600105847814672114227e0;
constexpr double b9 = 3.1116436695781989440891606237e-1;
constexpr double b10 = -1.52160949662516078556178806805e-1;
constexpr double b11 = 2.01365400804030348374776537501e-1;
constexpr double b12 = 4.47106157277725905176885569043e-2;
constexpr double bhh1 = 0.244094488188976377952755905512e+00;
constexpr double bhh2 = 0.733846688281611857341361741547e+00;
constexpr double bhh3 = 0.220588235294117647058823529412e-01;
constexpr double er1 = 0.1312004499419488073250102996e-01;
constexpr double er6 = -0.1225156446376204440720569753e+01;
constexpr double er7 = -0.4957589496572501915214079952e+00;
constexpr double er8 = 0.1664377182454986536961530415e+01;
constexpr double er9 = -0.3503288487499736816886487290e+00;
constexpr double er10 = 0.3341791187130174790297318841e+00;
constexpr double er11 = 0.8192320648511571246570742613e-01;
constexpr double er12 = -0.2235530786388629525884427845e-01;
}  // namespace dop853

}  // namespace

const char* method_name(Method m) { return m == Method::dop853 ? "dop853" : "dopri5"; }

Method method_from_name(const std::string& s) {
  if (s == "dopri5") return Method::dopri5;
  if (s == "dop853") return Method::dop853;
  throw Error(ErrorCode::ConfigError, "unknown integrator method '" + s + "'");
}

Settings Settings::finer(double factor) const {
  Settings s = *this;
  s.atol /= factor;
  s.rtol /= factor;
  return s;
}

Stepper::Stepper(Rhs f, Settings s, double t0, const Vec& x0) : rhs_(std::move(f)), set_(std::move(s)) {
  st_.t = t0;
  st_.x = set_.period ? torus_wrap(x0, *set_.period) : x0;
  st_.f = rhs_(t0, st_.x);
  ++evals_;
  t_prev_ = t0;
  x_prev_ = st_.x;
  f_prev_ = st_.f;
  x_end_ = st_.x;
}

void Stepper::restore(const State& s) {
  st_ = s;
  started_ = true;
  t_prev_ = s.t;
  x_prev_ = s.x;
  f_prev_ = s.f;
  x_end_ = s.x;
}

double Stepper::error_norm(const Vec& e, const Vec& x0, const Vec& x1) const {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    double sc = set_.atol + set_.rtol * std::max(std::abs(x0[i]), std::abs(x1[i]));
    double r = e[i] / sc;
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(e.size()));
}

Vec Stepper::raw_step(double t, const Vec& x, const Vec& k1, double h, double* err, Vec* f_new) const {
  const Rhs& F = rhs_;
  if (set_.method == Method::dopri5) {
    using namespace dp5;
    Vec k2 = F(t + c2 * h, x + h * (a21 * k1));
    Vec k3 = F(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    Vec k4 = F(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    Vec k5 = F(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Vec k6 = F(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vec xn = x + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    Vec k7 = F(t + h, xn);
    evals_ += 6;
    if (err) {
      Vec e = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      *err = error_norm(e, x, xn);
    }
    if (f_new) *f_new = k7;
    return xn;
  }
  using namespace dop853;
  Vec k2 = F(t + c2 * h, x + h * (a21 * k1));
  Vec k3 = F(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
  Vec k4 = F(t + c4 * h, x + h * (a41 * k1 + a43 * k3));
  Vec k5 = F(t + c5 * h, x + h * (a51 * k1 + a53 * k3 + a54 * k4));
  Vec k6 = F(t + c6 * h, x + h * (a61 * k1 + a64 * k4 + a65 * k5));
  Vec k7 = F(t + c7 * h, x + h * (a71 * k1 + a74 * k4 + a75 * k5 + a76 * k6));
  Vec k8 = F(t + c8 * h, x + h * (a81 * k1 + a84 * k4 + a85 * k5 + a86 * k6 + a87 * k7));
  Vec k9 = F(t + c9 * h, x + h * (a91 * k1 + a94 * k4 + a95 * k5 + a96 * k6 + a97 * k7 + a98 * k8));
  Vec k10 = F(t + c10 * h, x + h * (a101 * k1 + a104 * k4 + a105 * k5 + a106 * k6 + a107 * k7 + a108 * k8 +
                                    a109 * k9));
  Vec k11 = F(t + c11 * h, x + h * (a111 * k1 + a114 * k4 + a115 * k5 + a116 * k6 + a117 * k7 + a118 * k8 +
                                    a119 * k9 + a1110 * k10));
  Vec k12 = F(t + h, x + h * (a121 * k1 + a124 * k4 + a125 * k5 + a126 * k6 + a127 * k7 + a128 * k8 + a129 * k9 +
                              a1210 * k10 + a1211 * k11));
  evals_ += 11;
  Vec kb = b1 * k1 + b6 * k6 + b7 * k7 + b8 * k8 + b9 * k9 + b10 * k10 + b11 * k11 + b12 * k12;
  Vec xn = x + h * kb;
  if (err) {
    double e5 = 0.0, e3 = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double sc = set_.atol + set_.rtol * std::max(std::abs(x[i]), std::abs(xn[i]));
      double d3 = (kb[i] - bhh1 * k1[i] - bhh2 * k9[i] - bhh3 * k12[i]) / sc;
      double d5 = (er1 * k1[i] + er6 * k6[i] + er7 * k7[i] + er8 * k8[i] + er9 * k9[i] + er10 * k10[i] +
                   er11 * k11[i] + er12 * k12[i]) /
                  sc;
      e3 += d3 * d3;
      e5 += d5 * d5;
    }
    double den = e5 + 0.01 * e3;
    if (den <= 0.0) den = 1.0;
    *err = std::abs(h) * e5 / std::sqrt(static_cast<double>(x.size()) * den);
  }
  if (f_new) f_new->resize(0);
  return xn;
}

double Stepper::initial_step(double t_end) {
  const int order = set_.method == Method::dop853 ? 8 : 5;
  const Vec& x = st_.x;
  const Vec& f = st_.f;
  Vec sc(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) sc[i] = set_.atol + set_.rtol * std::abs(x[i]);
  double n = static_cast<double>(x.size());
  double d0 = std::sqrt(x.cwiseQuotient(sc).squaredNorm() / n);
  double d1 = std::sqrt(f.cwiseQuotient(sc).squaredNorm() / n);
  double span = t_end - st_.t;
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min({h0, set_.h_max, span});
  Vec f1 = rhs_(st_.t + h0, x + h0 * f);
  ++evals_;
  double d2 = std::sqrt((f1 - f).cwiseQuotient(sc).squaredNorm() / n) / h0;
  double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 1.0 / order);
  return std::min({100.0 * h0, h1, set_.h_max, span});
}

bool Stepper::step(double t_end) {
  if (!(st_.t < t_end)) return false;
  if (!started_) {
    st_.h = set_.h_init > 0.0 ? set_.h_init : initial_step(t_end);
    started_ = true;
  }
  const bool dp = set_.method == Method::dopri5;
  const double expo = dp ? 0.2 : 0.125;
  const double facmin = dp ? 0.2 : 0.333;
  const double facmax = dp ? 10.0 : 6.0;
  for (;;) {
    double h = std::min(st_.h, set_.h_max);
    if (set_.step_limit) h = std::min(h, set_.step_limit(st_.t, st_.x, st_.f, h));
    const double proposal = h;
    const double rem = t_end - st_.t;
    bool last = false;
    if (h >= rem * (1.0 - 1e-12)) {
      h = rem;
      last = true;
    }
    const double hmin = 1e-14 * std::max(1.0, std::abs(st_.t));
    if (!(h > hmin) && !last) {
      throw Error(ErrorCode::IntegrationFailure, "step size underflow",
                  {{"t", st_.t}, {"h", h}, {"x", std::vector<double>(st_.x.data(), st_.x.data() + st_.x.size())}});
    }
    double err = 0.0;
    Vec fn;
    Vec xn = raw_step(st_.t, st_.x, st_.f, h, &err, &fn);
    if (err <= 1.0 && std::isfinite(err) && xn.allFinite()) {
      t_prev_ = st_.t;
      x_prev_ = st_.x;
      f_prev_ = st_.f;
      x_end_ = xn;
      if (last) {
        st_.t = t_end;
        st_.t_comp = 0.0;
      } else {
        double y = h - st_.t_comp;
        double tn = st_.t + y;
        st_.t_comp = (tn - st_.t) - y;
        st_.t = tn;
      }
      st_.x = set_.period ? torus_wrap(xn, *set_.period) : xn;
      if (dp && !set_.period) {
        st_.f = fn;
      } else {
        st_.f = rhs_(st_.t, st_.x);
        ++evals_;
      }
      budget_ += err * (set_.atol + set_.rtol * st_.x.cwiseAbs().maxCoeff());
      double fac = err == 0.0 ? facmax : std::clamp(0.9 * std::pow(err, -expo), facmin, facmax);
      if (st_.last_rejected) fac = std::min(fac, 1.0);
      st_.h = h * fac;
      if (last) st_.h = std::max(st_.h, proposal);
      st_.last_rejected = false;
      ++steps_;
      if (steps_ > set_.max_steps)
        throw Error(ErrorCode::IntegrationFailure, "maximum number of steps exceeded", {{"t", st_.t}});
      return true;
    }
    ++rejects_;
    double fac = std::isfinite(err) ? std::max(facmin, 0.9 * std::pow(err, -expo)) : facmin;
    st_.h = h * std::min(fac, 0.9);
    st_.last_rejected = true;
    if (st_.h < 1e-14 * std::max(1.0, std::abs(st_.t)))
      throw Error(ErrorCode::IntegrationFailure, "step size underflow after rejection",
                  {{"t", st_.t}, {"x", std::vector<double>(st_.x.data(), st_.x.data() + st_.x.size())}});
  }
}

void Stepper::advance(double t_end, const std::function<bool(const Stepper&)>& observer) {
  while (step(t_end)) {
    if (observer && !observer(*this)) return;
  }
}

Vec Stepper::dense(double t) const {
  double h = st_.t - t_prev_;
  if (h <= 0.0) return x_prev_;
  double th = (t - t_prev_) / h;
  double th2 = th * th, th3 = th2 * th;
  return (2 * th3 - 3 * th2 + 1) * x_prev_ + (th3 - 2 * th2 + th) * h * f_prev_ + (-2 * th3 + 3 * th2) * x_end_ +
         (th3 - th2) * h * st_.f;
}

Vec Stepper::dense_derivative(double t) const {
  double h = st_.t - t_prev_;
  if (h <= 0.0) return f_prev_;
  double th = (t - t_prev_) / h;
  double th2 = th * th;
  return ((6 * th2 - 6 * th) * x_prev_ + (-6 * th2 + 6 * th) * x_end_) / h + (3 * th2 - 4 * th + 1) * f_prev_ +
         (3 * th2 - 2 * th) * st_.f;
}

Vec Stepper::exact_at(double t) const {
  if (t <= t_prev_) return x_prev_;
  if (t >= st_.t) return x_end_;
  return raw_step(t_prev_, x_prev_, f_prev_, t - t_prev_, nullptr, nullptr);
}

// ---------------------------------------------------------------- Trajectory

void Trajectory::push(double t, const Vec& x, const Vec& f, const Vec* xu) {
  if (!t_.empty() && !(t > t_.back())) return;
  if (dim_ == 0) dim_ = static_cast<int>(x.size());
  t_.push_back(t);
  x_.push_back(x);
  f_.push_back(f);
  if (period) xu_.push_back(xu ? *xu : x);
}

size_t Trajectory::segment_index(double t) const {
  if (t_.size() < 2 || t <= t_.front()) return 0;
  if (t >= t_.back()) return t_.size() - 2;
  auto it = std::upper_bound(t_.begin(), t_.end(), t);
  return static_cast<size_t>(it - t_.begin()) - 1;
}

Vec Trajectory::at(double t) const {
  if (t_.size() == 1) return x_[0];
  size_t i = segment_index(t);
  if (t == t_[i]) return x_[i];
  if (t == t_[i + 1]) return x_[i + 1];
  double h = t_[i + 1] - t_[i];
  double th = (t - t_[i]) / h;
  double th2 = th * th, th3 = th2 * th;
  const Vec& x1 = period ? xu_[i + 1] : x_[i + 1];
  return (2 * th3 - 3 * th2 + 1) * x_[i] + (th3 - 2 * th2 + th) * h * f_[i] + (-2 * th3 + 3 * th2) * x1 +
         (th3 - th2) * h * f_[i + 1];
}

Vec Trajectory::derivative_at(double t) const {
  if (t_.size() == 1) return f_[0];
  size_t i = segment_index(t);
  double h = t_[i + 1] - t_[i];
  double th = (t - t_[i]) / h;
  double th2 = th * th;
  const Vec& x1 = period ? xu_[i + 1] : x_[i + 1];
  return ((6 * th2 - 6 * th) * x_[i] + (-6 * th2 + 6 * th) * x1) / h + (3 * th2 - 4 * th + 1) * f_[i] +
         (3 * th2 - 2 * th) * f_[i + 1];
}

Vec Trajectory::state_at(double t) const {
  if (!context || t_.size() < 2) return at(t);
  size_t i = segment_index(t);
  if (t == t_[i]) return x_[i];
  if (t == t_[i + 1]) return x_[i + 1];
  Stepper probe(context->rhs, context->settings, t_[i], x_[i]);
  return probe.raw_step(t_[i], x_[i], f_[i], t - t_[i], nullptr, nullptr);
}

std::string Trajectory::to_csv(size_t max_rows) const {
  std::string out = "t";
  for (int i = 0; i < dim_; ++i) out += ",x" + std::to_string(i + 1);
  out += "\n";
  size_t stride = 1;
  if (max_rows > 0 && t_.size() > max_rows) stride = (t_.size() + max_rows - 1) / max_rows;
  char buf[64];
  for (size_t k = 0; k < t_.size(); ++k) {
    if (k % stride != 0 && k + 1 != t_.size()) continue;
    std::snprintf(buf, sizeof buf, "%.17g", t_[k]);
    out += buf;
    for (int i = 0; i < dim_; ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", x_[k][i]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

Rhs autonomous(const VectorField& V) {
  auto f = V.eval_fn();
  return [f](double, const Vec& x) { return f(x); };
}

Trajectory integrate_rhs(const Rhs& f, int dim, const Vec& x0, double t0, double t1, const Settings& s) {
  if (!(t1 > t0)) throw Error(ErrorCode::HypothesisViolation, "integrate needs t1 > t0", {{"t0", t0}, {"t1", t1}});
  Trajectory tr(dim);
  tr.period = s.period;
  Stepper st(f, s, t0, x0);
  tr.push(st.t(), st.x(), st.f());
  st.advance(t1, [&](const Stepper& k) {
    Vec xu = k.x_end_unwrapped();
    tr.push(k.t(), k.x(), k.f(), &xu);
    return true;
  });
  tr.tol_budget = st.error_budget();
  tr.context = std::make_shared<Trajectory::Context>(Trajectory::Context{f, s});
  return tr;
}

Trajectory integrate(const VectorField& V, const Vec& x0, double t0, double t1, const Settings& s) {
  Settings local = s;
  if (V.period && !local.period) local.period = V.period;
  return integrate_rhs(autonomous(V), V.dim(), x0, t0, t1, local);
}

}  // namespace steerkit
