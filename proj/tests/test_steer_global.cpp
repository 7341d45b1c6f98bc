#include <cmath>
#include <random>

#include "doctest.h"
#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"
#include "steerkit/steer_global.hpp"
#include "util.hpp"

using namespace steerkit;

namespace {

// Straight substitution into the three-way minimum.
RhoTau hand_rho_tau(double L, double S, double e) {
  double a = 0.25, b = e * e / (144 * (L + e)), c = e * e / (288 * (L + e) * (S + e));
  double rho = 0.9 * std::min({a, b, c});
  return {rho, rho * e / 12};
}

PlanRequest short_request() {
  PlanRequest req;
  req.p = make_vec({0.2, 0.3});
  req.q = make_vec({0.2015, 0.3008});
  req.epsilon = 0.2;
  req.threads = 1;
  return req;
}

}  // namespace

TEST_SUITE("steer_global") {
  TEST_CASE("choose_rho_tau worked example") {
    RhoTau r = choose_rho_tau(1.0, 1.0, 0.3);
    CHECK(r.rho == doctest::Approx(1.6642e-4).epsilon(1e-4));
    CHECK(r.tau == doctest::Approx(4.1605e-6).epsilon(1e-4));
    RhoTau h = hand_rho_tau(1.0, 1.0, 0.3);
    CHECK(std::abs(r.rho - h.rho) <= 1e-12 * h.rho);
    CHECK(std::abs(r.tau - h.tau) <= 1e-12 * h.tau);
  }

  TEST_CASE("choose_rho_tau: hand values, inequalities, scaling") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> U(0.0, 4.0);
    for (int i = 0; i < 200; ++i) {
      double L = U(rng), S = U(rng), e = 0.01 + U(rng) / 4;
      RhoTau r = choose_rho_tau(L, S, e), h = hand_rho_tau(L, S, e);
      CHECK(std::abs(r.rho - h.rho) <= 1e-12 * h.rho);
      CHECK(r.rho < 0.25);
      CHECK(r.rho < e * e / (144 * (L + e)));
      CHECK(r.rho < e * e / (288 * (L + e) * (S + e)));
      CHECK(r.tau == r.rho * e / 12);
    }
    // small eps: rho is quadratic, tau cubic in eps
    RhoTau a = choose_rho_tau(1.0, 1.0, 1e-3), b = choose_rho_tau(1.0, 1.0, 2e-3);
    CHECK(b.rho / a.rho == doctest::Approx(4.0).epsilon(2e-3));
    CHECK(b.tau / a.tau == doctest::Approx(8.0).epsilon(2e-3));
    CHECK_THROWS_AS(choose_rho_tau(1.0, 1.0, 0.0), Error);
  }

  TEST_CASE("waypoints") {
    Vec p = make_vec({0, 0}), q = make_vec({0.6, 0.8});
    CHECK(waypoint_count(p, q, 0.2) == 24);
    std::vector<Vec> w = waypoints(p, q, 0.2);
    REQUIRE(w.size() == 24);
    CHECK(same_vec(w.front(), p));
    CHECK(same_vec(w.back(), q));
    for (size_t j = 1; j < w.size(); ++j) {
      CHECK((w[j] - w[j - 1]).norm() <= 0.9 * 0.2 / 4 + 1e-15);
      // collinear with p and q
      CHECK(std::abs(w[j][0] * 0.8 - w[j][1] * 0.6) < 1e-15);
    }
    CHECK(waypoint_count(p, p, 0.2) == 1);
  }

  TEST_CASE("p equal to q gives the zero control") {
    PlanRequest req = short_request();
    req.q = req.p;
    PlanResult r = plan(testutil::cellular(), req);
    CHECK(r.ok());
    CHECK(r.control.empty());
    CHECK(r.T == 0.0);
    VerifyReport v = verify_plan(testutil::cellular(), r);
    CHECK(v.pass);
    CHECK(v.terminal_error == 0.0);
  }

  TEST_CASE("short cellular plan verifies, and a tampered control does not") {
    VectorField V = testutil::cellular();
    PlanResult r = plan(V, short_request());
    CHECK(r.ok());
    for (auto& [k, v] : r.certificate["checks"].items()) CHECK_MESSAGE(v.get<bool>(), k);
    CHECK(r.terminal_error < 1e-3);
    CHECK(r.sup_u_sampled < 0.2);
    CHECK(r.control.sup_cert < 0.2);
    CHECK(r.control.t_begin() == 0.0);
    CHECK(r.control.t_end() == r.T);
    for (double t : r.certificate["return_times"]) CHECK(t > 3.0 / 0.2);

    VerifyReport v = verify_plan(V, r);
    CHECK(v.pass);
    CHECK(v.terminal_error < 1e-3);
    CHECK(v.sup_u < 0.2);

    // a registry rebuilt from the certificate replays the same run
    PlanResult again = r;
    again.registry = rebuild_registry(V, r.registry_spec);
    VerifyReport v2 = verify_plan(V, again);
    CHECK(v2.pass);
    CHECK(v2.terminal_error == v.terminal_error);

    // perturb one steering offset: the run no longer lands on q
    PlanResult bad = r;
    bool changed = false;
    for (auto& seg : bad.control.segments) {
      if (seg.d.inner && seg.d.inner->kind == SegmentKind::steer) {
        seg.d.inner->alpha[0] += 0.01;
        changed = true;
        break;
      }
    }
    REQUIRE(changed);
    VerifyReport vb = verify_plan(V, bad);
    CHECK_FALSE(vb.pass);
  }

  TEST_CASE("plans are deterministic") {
    VectorField V = testutil::cellular();
    PlanResult a = plan(V, short_request()), b = plan(V, short_request());
    CHECK(a.certificate.dump() == b.certificate.dump());
    CHECK(a.control == b.control);
  }

  TEST_CASE("constant field is rejected before planning") {
    PlanRequest req = short_request();
    try {
      plan(testutil::constant(1, 0), req);
      FAIL("expected VMDViolation");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::VMDViolation);
    }
  }
}
