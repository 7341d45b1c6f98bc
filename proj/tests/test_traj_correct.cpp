#include <cmath>
#include <random>

#include "doctest.h"
#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"
#include "steerkit/traj_correct.hpp"
#include "util.hpp"

using namespace steerkit;

namespace {

FieldStats unit_stats(bool with_omega) {
  FieldStats st;
  st.sup = 1.0;
  st.lip = 1.0;
  if (with_omega) st.omega = [](double r) { return r; };
  return st;
}

// Independent bisection on the printed C0 expression.
double c0_root(double target) {
  const double g = BumpFunction::kGradSup;
  auto f = [g](double d) { return d * d * d + g * d * d / (1 - g * d * d); };
  double lo = 0, hi = 0.999 / std::sqrt(g);
  for (int i = 0; i < 300; ++i) {
    double m = 0.5 * (lo + hi);
    (f(m) < target ? lo : hi) = m;
  }
  return lo;
}

const Settings kFine = Settings::with(Method::dop853, 1e-12);

}  // namespace

TEST_SUITE("traj_correct") {
  TEST_CASE("bump profile and audited constants") {
    CHECK(BumpFunction::eta(0.0) == 1.0);
    CHECK(BumpFunction::eta(1.0) == 1.0);
    CHECK(BumpFunction::eta(2.0) == 0.0);
    CHECK(BumpFunction::eta(7.0) == 0.0);
    for (int i = 0; i <= 1000; ++i) {
      double r = 2.5 * i / 1000;
      double e = BumpFunction::eta(r);
      CHECK(e >= 0.0);
      CHECK(e <= 1.0);
    }
    BumpFunction::Audit a = BumpFunction::audit(200000);
    CHECK(a.ok);
    CHECK(a.grad_max <= BumpFunction::kGradSup);
    CHECK(a.hess_max <= BumpFunction::kHessSup);
    // the constants are tight enough to be useful
    CHECK(a.grad_max > 0.99 * BumpFunction::kGradSup);
  }

  TEST_CASE("choose_delta: zero field hits the invertibility cap") {
    FieldStats st;
    double d = choose_delta(st, 0.1, false);
    CHECK(d == doctest::Approx(0.999 * std::min(1.0, 1.0 / std::sqrt(BumpFunction::kGradSup))).epsilon(1e-15));
  }

  TEST_CASE("choose_delta: C0 mode solves the printed bound") {
    double d = choose_delta(unit_stats(false), 0.2, false);
    double oracle = c0_root(0.1);
    CHECK(d == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(c0_bound(unit_stats(false), d) < 0.1);
    CHECK(c0_bound(unit_stats(false), d * (1 + 1e-9)) >= 0.1 * (1 - 1e-9));
  }

  TEST_CASE("choose_delta: C1 mode also satisfies the printed C1 expression") {
    double d = choose_delta(unit_stats(true), 0.2, true);
    const double g = BumpFunction::kGradSup, h = BumpFunction::kHessSup;
    double q = 1 - g * d * d;
    CHECK(d * d * d + h * d / (q * q) < 0.1);
    CHECK(c0_bound(unit_stats(true), d) < 0.1);
    CHECK(c1_bound(unit_stats(true), d) < 0.1);
    CHECK(d <= choose_delta(unit_stats(false), 0.2, false));
    CHECK_THROWS_AS(choose_delta(unit_stats(false), 0.2, true), Error);
  }

  TEST_CASE("choose_delta: degenerate budget") {
    FieldStats st;
    st.sup = 1e30;
    st.lip = 1e30;
    try {
      choose_delta(st, 1e-12, false);
      FAIL("expected DegenerateBudget");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateBudget);
    }
  }

  TEST_CASE("phi map: identity, translation core, identity exterior") {
    const double delta = 0.05;
    Vec x0 = make_vec({1, 0});
    PhiMap id(x0, x0, delta);
    CHECK(id.identity());
    Vec pt = make_vec({1.02, 0.01});
    CHECK(same_vec(id.forward(pt), pt));
    CHECK((id.jacobian(pt) - Mat::Identity(2, 2)).norm() == 0.0);

    Vec y0 = x0 + make_vec({0.6, 0.8}) * (0.999 * std::pow(delta, 3));
    PhiMap m(x0, y0, delta);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 500; ++i) {
      Vec u = testutil::uniform_point(rng, -1, 1);
      if (u.norm() > 1) continue;
      Vec inner = x0 + delta * u;
      CHECK((m.forward(inner) - (inner - (y0 - x0))).norm() < 1e-16);
      Vec outer = x0 + (2 * delta + std::abs(u[0])) * make_vec({std::cos(7.0 * i), std::sin(7.0 * i)});
      CHECK(same_vec(m.forward(outer), outer));
    }
    CHECK_THROWS_AS(PhiMap(x0, x0 + make_vec({2 * std::pow(delta, 3), 0}), delta), Error);
    CHECK_THROWS_AS(PhiMap(x0, x0, 0.9), Error);
  }

  TEST_CASE("phi map: inverse round trip including the annulus") {
    const double delta = 0.05;
    Vec x0 = make_vec({0.3, -0.2});
    PhiMap m(x0, x0 + make_vec({0.999 * std::pow(delta, 3), 0}), delta);
    for (int i = 0; i < 2000; ++i) {
      Vec x = halton_in_ball(1 + i, x0, 2.5 * delta);
      CHECK((m.inverse(m.forward(x)) - x).norm() < 1e-10);
    }
  }

  TEST_CASE("pushforward: support and C0 estimate on the rotation") {
    VectorField V = testutil::rotation();
    const double delta = 0.05;
    Vec x0 = make_vec({1, 0});
    PhiMap id(x0, x0, delta);
    VectorField I = pushforward_field(V, id);
    for (int i = 0; i < 100; ++i) {
      Vec y = halton_in_ball(1 + i, x0, 3 * delta);
      CHECK((I(y) - V(y)).norm() < 1e-15);
    }
    PhiMap m(x0, x0 + make_vec({0.999 * std::pow(delta, 3), 0}), delta);
    VectorField W = pushforward_field(V, m);
    CHECK(W.provenance == Provenance::pushforward);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
      Vec y = testutil::uniform_point(rng, -3, 3);
      if ((y - x0).norm() < 2 * delta) continue;
      CHECK(same_vec(W(y), V(y)));
    }
    // sup|V - W| over the ball against Lip V delta^3 + |V|_inf g delta^2/(1 - g delta^2)
    FieldStats st;
    st.lip = 1.0;
    st.sup = 1.0 + 2 * delta;  // |V| on B_2delta(x0)
    const double bound = c0_bound(st, delta);
    PhiAudit a = audit_phi(V, W, m, 10000, 3);
    CHECK(a.violations == 0);
    CHECK(a.field_sup_dev <= bound);
    CHECK(a.displacement_max <= std::pow(delta, 3));
    CHECK(a.inverse_err < 1e-10);
  }

  TEST_CASE("correct_start: identity when y0 is already the start") {
    VectorField V = testutil::rotation();
    Trajectory x = integrate(V, make_vec({1, 0}), 0.0, 3.0, kFine);
    CorrectStartResult r = correct_start(V, x, make_vec({1, 0}), 0.2, Direction::forward, false, kFine);
    CHECK(r.map.identity());
    for (size_t i = 0; i < r.traj.size(); ++i)
      CHECK((r.traj.states()[i] - x.state_at(r.traj.times()[i])).norm() < 1e-12);
  }

  TEST_CASE("correct_start forward on the rotation") {
    VectorField V = testutil::rotation();
    const double T = 5.0;
    Trajectory x = integrate(V, make_vec({1, 0}), 0.0, T, kFine);
    FieldStats st = local_stats(V, make_vec({1, 0}), 2.0, true);
    const double delta = choose_delta(st, 0.2, true);
    Vec y0 = make_vec({1 + 0.999 * std::pow(delta, 3), 0});
    CorrectStartResult r = correct_start(V, x, y0, 0.2, Direction::forward, true, kFine);
    CHECK(r.delta == delta);
    CHECK((r.traj.states().front() - y0).norm() < 1e-10);
    int outside = 0;
    for (size_t i = 0; i < r.traj.size(); ++i) {
      double t = r.traj.times()[i];
      const Vec& y = r.traj.states()[i];
      // Phi maps the corrected path onto the original orbit at all times
      CHECK((r.map.forward(y) - make_vec({std::cos(t), -std::sin(t)})).norm() < 10 * r.traj.tol_budget + 1e-10);
      if ((y - make_vec({1, 0})).norm() < 2 * delta) continue;
      ++outside;
      CHECK((y - make_vec({std::cos(t), -std::sin(t)})).norm() < 1e-8);
    }
    CHECK(outside > 10);
    CHECK(r.coincidence_error < 1e-8);
    CHECK(r.sup_dev < 0.2);
    CHECK(r.sup_dev + r.lip_dev < 0.2);
    CHECK(r.c1_certified);
  }

  TEST_CASE("correct_start backward moves the end point") {
    VectorField V = testutil::rotation();
    const double T = 4.0;
    Trajectory x = integrate(V, make_vec({1, 0}), 0.0, T, kFine);
    Vec xT = x.states().back();
    FieldStats st = local_stats(V, xT, 2.0, false);
    const double delta = choose_delta(st, 0.2, false);
    Vec y1 = xT + make_vec({0, 0.999 * std::pow(delta, 3)});
    CorrectStartResult r = correct_start(V, x, y1, 0.2, Direction::backward, false, kFine);
    CHECK(r.traj.t1() == doctest::Approx(T).epsilon(1e-15));
    CHECK((r.traj.states().back() - y1).norm() < 1e-10);
    CHECK(r.coincidence_error < 1e-8);
  }

  TEST_CASE("correct_start rejects a displacement above delta^3") {
    VectorField V = testutil::rotation();
    Trajectory x = integrate(V, make_vec({1, 0}), 0.0, 2.0, kFine);
    try {
      correct_start(V, x, make_vec({1.1, 0}), 0.2, Direction::forward, false, kFine);
      FAIL("expected HypothesisViolation");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::HypothesisViolation);
      CHECK(e.details().contains("required"));
    }
  }
}
