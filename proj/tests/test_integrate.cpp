#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "steerkit/control.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/json_util.hpp"
#include "steerkit/steer_local.hpp"
#include "util.hpp"

using namespace steerkit;

namespace {

Segment seg(double t0, double t1, Descriptor d) { return Segment{t0, t1, std::move(d)}; }

ControlSchedule single(double t0, double t1, Descriptor d) {
  ControlSchedule u;
  u.append(seg(t0, t1, std::move(d)));
  return u;
}

}  // namespace

TEST_SUITE("integrate") {
  TEST_CASE("zero field keeps the state fixed") {
    Vec p = make_vec({0.3, -1.2});
    Trajectory tr = integrate(testutil::constant(0, 0), p, 0.0, 5.0, {});
    for (const Vec& x : tr.states()) CHECK((x - p).norm() == 0.0);
    CHECK((tr.at(2.71) - p).norm() == 0.0);
  }

  TEST_CASE("rotation returns after 2 pi") {
    Trajectory tr = integrate(testutil::rotation(), make_vec({1, 0}), 0.0, 2 * M_PI, {});
    CHECK((tr.states().back() - make_vec({1, 0})).norm() < 1e-6);
  }

  TEST_CASE("cellular flow conserves its stream function") {
    VectorField V = testutil::cellular();
    Vec x0 = make_vec({0.7, 1.1});
    Trajectory tr = integrate(V, x0, 0.0, 50.0, {});
    auto h = [](const Vec& x) { return std::sin(x[0]) * std::sin(x[1]); };
    double worst = 0.0;
    for (const Vec& x : tr.states()) worst = std::max(worst, std::abs(h(x) - h(x0)));
    for (int k = 0; k <= 1000; ++k) worst = std::max(worst, std::abs(h(tr.at(0.05 * k)) - h(x0)));
    CHECK(worst < 1e-6);
  }

  TEST_CASE("trajectory invariants") {
    Trajectory tr = integrate(testutil::cellular(), make_vec({0.2, 0.4}), 0.0, 20.0, {});
    CHECK(tr.tol_budget >= 0.0);
    for (size_t i = 1; i < tr.size(); ++i) CHECK(tr.times()[i] > tr.times()[i - 1]);
    for (size_t i = 0; i < tr.size(); ++i) CHECK(same_vec(tr.at(tr.times()[i]), tr.states()[i]));
    std::string csv = tr.to_csv();
    CHECK(csv.rfind("t,x1,x2\n", 0) == 0);
  }

  TEST_CASE("integration is deterministic") {
    Settings s = Settings::with(Method::dop853, 1e-10);
    Trajectory a = integrate(testutil::cellular(), make_vec({0.2, 0.4}), 0.0, 30.0, s);
    Trajectory b = integrate(testutil::cellular(), make_vec({0.2, 0.4}), 0.0, 30.0, s);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a.times()[i] == b.times()[i]);
      CHECK(same_vec(a.states()[i], b.states()[i]));
    }
  }

  TEST_CASE("blow-up surfaces as an integration failure") {
    VectorField V(1, [](const Vec& x) { return Vec(x.cwiseProduct(x)); }, nullptr, kInf, kInf, Provenance::analytic);
    Settings s;
    s.max_steps = 100000;
    try {
      integrate(V, make_vec({1.0}), 0.0, 2.0, s);
      FAIL("expected IntegrationFailure");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::IntegrationFailure);
    }
  }

  TEST_CASE("convergence: halving tol at least halves the endpoint error") {
    VectorField R = testutil::rotation();
    Vec x0 = make_vec({1, 0});
    const double T = 10.0;
    Vec oracle = make_vec({std::cos(T), -std::sin(T)});
    Trajectory ref = integrate(R, x0, 0.0, T, Settings::with(Method::dop853, 1e-13));
    CHECK((ref.states().back() - oracle).norm() < 1e-11);
    for (Method m : {Method::dopri5, Method::dop853}) {
      double prev = INFINITY;
      for (double tol : {1e-5, 1e-6, 1e-7, 1e-8}) {
        double err = (integrate(R, x0, 0.0, T, Settings::with(m, tol)).states().back() - ref.states().back()).norm();
        CHECK(err * 2 <= prev);
        prev = err;
      }
    }
  }

  TEST_CASE("zero schedule reproduces the free flow bitwise") {
    VectorField V = testutil::cellular();
    FieldRegistry reg;
    reg.add("V", V);
    Vec x0 = make_vec({0.7, 1.1});
    Trajectory free = integrate(V, x0, 0.0, 12.0, {});
    ControlledRun run = integrate_controlled(V, single(0.0, 12.0, Descriptor::zero()), reg, x0, 0.0, 12.0, {});
    REQUIRE(run.traj.size() == free.size());
    for (size_t i = 0; i < free.size(); ++i) {
      CHECK(run.traj.times()[i] == free.times()[i]);
      CHECK(same_vec(run.traj.states()[i], free.states()[i]));
    }
    CHECK(run.sup_u == 0.0);
  }

  TEST_CASE("constant control on the zero field moves linearly") {
    VectorField Z = testutil::constant(0, 0);
    FieldRegistry reg;
    reg.add("V", Z);
    Vec a = make_vec({0.03, -0.04}), x0 = make_vec({1, 2});
    ControlledRun run = integrate_controlled(Z, single(0.0, 1.0, Descriptor::constant(a)), reg, x0, 0.0, 1.0, {});
    CHECK((run.traj.states().back() - (x0 + a)).norm() < 1e-12);
  }

  TEST_CASE("steer segment from steer_endpoint hits its target at tol 1e-12") {
    VectorField F = testutil::rotation(10.0);
    FieldRegistry reg;
    reg.add("F", F);
    const double eps = 0.1, s = 1.0;
    Vec x0 = make_vec({1, 0});
    Trajectory tr = integrate(F, x0, 0.0, s, Settings::with(Method::dop853, 1e-13));
    TauRho tr_ = compute_tau_rho(F.lip_bound, F.sup_bound, s, eps);
    Vec y = tr.states().back() + make_vec({0.6, 0.8}) * 0.5 * tr_.rho;
    SteerSegment sg = steer_endpoint(F, "F", tr, y, eps);
    ControlledRun run = integrate_controlled(F, sg.schedule, reg, x0, 0.0, s, Settings::with(Method::dop853, 1e-12),
                                             {false, "F"});
    CHECK((run.traj.states().back() - y).norm() < 1e-7);
  }

  TEST_CASE("sup_norm examples") {
    FieldRegistry reg;
    Vec a = make_vec({0.3, -0.4});
    CHECK(sup_norm(single(0, 1, Descriptor::constant(a)), reg, 2, 10) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sup_norm(single(0, 1, Descriptor::zero()), reg, 2, 10) == 0.0);

    VectorField F = testutil::rotation(10.0);
    reg.add("F", F);
    const double eps = 0.1;
    Trajectory tr = integrate(F, make_vec({1, 0}), 0.0, 1.0, Settings::with(Method::dop853, 1e-13));
    TauRho k = compute_tau_rho(F.lip_bound, F.sup_bound, 1.0, eps);
    Vec y = tr.states().back() + make_vec({0, 1}) * 0.5 * k.rho;
    SteerSegment sg = steer_endpoint(F, "F", tr, y, eps);
    double dense = sup_norm(sg.schedule, reg, 2, 100000);
    CHECK(dense < eps);
    CHECK(dense <= sg.schedule.segments.back().d.analytic_bound());
  }

  TEST_CASE("concat") {
    ControlSchedule a = single(0, 1, Descriptor::zero()), b = single(1, 2, Descriptor::zero());
    ControlSchedule ab = concat(a, b);
    CHECK(ab.t_begin() == 0.0);
    CHECK(ab.t_end() == 2.0);
    CHECK_NOTHROW(ab.validate());
    FieldRegistry reg;
    CHECK(sup_norm(ab, reg, 2, 50) == 0.0);
    CHECK(concat(a, ControlSchedule{}) == a);
    CHECK_THROWS_AS(concat(a, single(1.5, 2, Descriptor::zero())), Error);
    CHECK_THROWS_AS(concat(b, a), Error);

    // three hops: the merged certificate is the max of the parts, re-derived by dense sampling
    ControlSchedule h[3];
    double certs[3];
    for (int k = 0; k < 3; ++k) {
      h[k] = single(k, k + 1.0, Descriptor::constant(make_vec({0.01 * (k + 1) * (k == 1 ? 3 : 1), 0.0})));
      certs[k] = sup_norm(h[k], reg, 2, 1000);
      h[k].sup_cert = certs[k];
    }
    ControlSchedule all = concat(concat(h[0], h[1]), h[2]);
    CHECK(all.sup_cert == std::max({certs[0], certs[1], certs[2]}));
    CHECK(sup_norm(all, reg, 2, 1000) == all.sup_cert);
  }

  TEST_CASE("schedule validation rejects gaps and empty segments") {
    ControlSchedule u;
    u.segments.push_back(seg(0, 1, Descriptor::zero()));
    u.segments.push_back(seg(1.5, 2, Descriptor::zero()));
    CHECK_THROWS_AS(u.validate(), Error);
    ControlSchedule v;
    v.segments.push_back(seg(1, 1, Descriptor::zero()));
    CHECK_THROWS_AS(v.validate(), Error);
    ControlSchedule w;
    w.append(seg(0, 1, Descriptor::zero()));
    CHECK_THROWS_AS(w.append(seg(2, 3, Descriptor::zero())), Error);
  }

  TEST_CASE("right-continuous segment lookup") {
    ControlSchedule u = concat(single(0, 1, Descriptor::zero()), single(1, 2, Descriptor::constant(make_vec({1, 0}))));
    CHECK(u.find(0.0) == 0);
    CHECK(u.find(1.0) == 1);
    CHECK(u.find(1.999) == 1);
    CHECK(u.find(2.5) == u.segments.size());
  }

  TEST_CASE("schedule JSON and line formats round-trip bit-exactly") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> U(-1, 1);
    ControlSchedule u;
    double t = 0.1;
    for (int k = 0; k < 20; ++k) {
      double t1 = t + std::abs(U(rng)) + 1e-3;
      Descriptor d;
      switch (k % 4) {
        case 0: d = Descriptor::zero(); break;
        case 1: d = Descriptor::constant(make_vec({U(rng), U(rng) / 3})); break;
        case 2:
          d.kind = SegmentKind::steer;
          d.z = make_vec({U(rng), U(rng)});
          d.x_start = make_vec({U(rng), U(rng)});
          d.alpha = make_vec({U(rng) * 1e-7, U(rng)});
          d.s = t1;
          d.tau = (t1 - t) / 3;
          d.gain = 20.0;
          d.base = "Vt";
          d.bound = std::abs(U(rng));
          break;
        default:
          d = Descriptor::field_difference("Vbar", "V", Descriptor::constant(make_vec({U(rng), 0.1})), 0.0123456789);
      }
      u.append(seg(t, t1, d));
      t = t1;
    }
    u.sup_cert = 0.1 + 1e-17;
    CHECK(ControlSchedule::from_json(nlohmann::json::parse(u.to_json().dump())) == u);
    std::stringstream ss;
    u.write(ss);
    CHECK(ControlSchedule::read(ss) == u);
  }

  TEST_CASE("field_difference control evaluates A(x) - B(x) along the state") {
    FieldRegistry reg;
    reg.add("A", testutil::rotation());
    reg.add("B", testutil::constant(1, 2));
    ControlFn f = make_control(Descriptor::field_difference("A", "B", Descriptor::zero(), 10.0), reg, 2);
    Vec x = make_vec({0.5, 3});
    CHECK((f(0.2, x) - (make_vec({3, -0.5}) - make_vec({1, 2}))).norm() == 0.0);
  }
}
