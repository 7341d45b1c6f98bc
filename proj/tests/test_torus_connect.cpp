#include <cmath>
#include <random>

#include "doctest.h"
#include "steerkit/errors.hpp"
#include "steerkit/json_util.hpp"
#include "steerkit/torus_connect.hpp"
#include "util.hpp"

using namespace steerkit;

namespace {

constexpr double kP = 2 * M_PI;

VectorField winding(double a, double b) {
  VectorField V = testutil::constant(a, b);
  V.period = kP;
  return V;
}

// Brute-force scan of the straight orbit t (a, b) for its closest approach to q.
double scan_closest(double a, double b, const Vec& q, double T, double dt) {
  double best = kInf;
  for (double t = 0; t <= T; t += dt) best = std::min(best, torus_distance(make_vec({a * t, b * t}), q, kP));
  return best;
}

}  // namespace

TEST_SUITE("torus_connect") {
  TEST_CASE("flat torus distance") {
    CHECK(torus_distance(make_vec({0.1, 0}), make_vec({kP - 0.1, 0}), kP) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(torus_distance(make_vec({0, 0}), make_vec({M_PI, M_PI}), kP) == doctest::Approx(M_PI * std::sqrt(2.0)));
    std::mt19937_64 rng(4);
    for (int i = 0; i < 300; ++i) {
      Vec a = testutil::uniform_point(rng, -10, 10), b = testutil::uniform_point(rng, -10, 10),
          c = testutil::uniform_point(rng, -10, 10);
      double ab = torus_distance(a, b, kP);
      CHECK(ab == doctest::Approx(torus_distance(b, a, kP)).epsilon(1e-14));
      CHECK(ab <= torus_distance(a, c, kP) + torus_distance(c, b, kP) + 1e-12);
      CHECK(ab <= M_PI * std::sqrt(2.0) + 1e-12);
      CHECK(torus_distance(a, a + kP * make_vec({3, -2}), kP) < 1e-12);
    }
  }

  TEST_CASE("transit on the irrational winding with a coarse ball") {
    VectorField V = winding(1, std::sqrt(2.0));
    const Vec p = make_vec({0, 0}), q = make_vec({M_PI, M_PI});
    const double delta = std::cbrt(2e-3);
    TransitOptions o;
    o.T_max = 1e4;
    o.threads = 1;
    Transit tr = find_transit(V, p, q, delta, o);
    CHECK(tr.T <= 1e4);
    CHECK(tr.miss_start <= 1e-3);
    CHECK(tr.miss_end <= 1e-3);
    CHECK(torus_distance(tr.x1, p, kP) <= 1e-3);
    CHECK(torus_distance(tr.x2, q, kP) <= 1e-3);
    // the orbit of x1 does reach x2 at time T
    Vec hit = tr.x1 + tr.T * make_vec({1, std::sqrt(2.0)});
    CHECK(torus_distance(hit, tr.x2, kP) < 1e-9);
    // the brute-force scan agrees that the orbit of p comes that close by then
    CHECK(scan_closest(1, std::sqrt(2.0), q, tr.T + 1e-3, 1e-4) <= tr.miss_end + torus_distance(tr.x1, p, kP) + 2e-4);
  }

  TEST_CASE("q on the orbit of p: exact hit and identity corrections") {
    VectorField V = winding(1, std::sqrt(2.0));
    const Vec p = make_vec({0.5, 0.25});
    const Vec q = torus_wrap(p + 2.0 * make_vec({1, std::sqrt(2.0)}), kP);
    ConnectOptions co;
    co.transit.threads = 1;
    co.transit.T_max = 100;
    ConnectResult r = connect(V, p, q, 0.1, co);
    CHECK(r.transit.candidate == 0);
    CHECK(same_vec(r.transit.x1, torus_wrap(p, kP)));
    CHECK(r.transit.T == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.terminal_error < 1e-12);
    CHECK(r.sup_dev < 1e-10);
    CHECK(r.exterior_bitwise);
    CHECK(r.certificate["pass"] == true);
  }

  TEST_CASE("connect with a coarse delta: support, gluing, landing") {
    VectorField V = winding(1, std::sqrt(2.0));
    ConnectOptions co;
    co.delta = std::cbrt(2e-3);
    co.transit.T_max = 1e4;
    co.transit.threads = 1;
    ConnectResult r = connect(V, make_vec({0, 0}), make_vec({M_PI, M_PI}), 1.0, co);
    CHECK(r.exterior_bitwise);
    CHECK(r.exterior_checked == 1000);
    CHECK(r.audit_p.violations == 0);
    CHECK(r.audit_q.violations == 0);
    CHECK(r.terminal_error < 1e-6);
    CHECK(r.gluing_deviation <= r.gluing_allowance);
    CHECK(r.lip_dev < 1.0);
    CHECK(r.certificate["pass"] == true);
    // the coarse ball is far too large for a 0.1 budget
    ConnectResult tight = connect(V, make_vec({0, 0}), make_vec({M_PI, M_PI}), 0.1, co);
    CHECK(tight.lip_dev >= 0.1);
    CHECK(tight.certificate["pass"] == false);
  }

  TEST_CASE("rational winding never reaches an off-orbit point") {
    VectorField V = winding(1, 1);
    TransitOptions o;
    o.T_max = 1e3;
    o.threads = 1;
    o.n_candidates = 4;
    try {
      find_transit(V, make_vec({0, 0}), make_vec({1.0, 2.5}), 0.1, o);
      FAIL("expected NoTransitFound");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NoTransitFound);
      // the diagonal circle stays 1.5/sqrt(2) away, less the start spread
      CHECK(num_from(e.details().at("closest_approach")) >= 1.5 / std::sqrt(2.0) - 1e-3);
    }
  }

  TEST_CASE("fields without a period are rejected") {
    CHECK_THROWS_AS(find_transit(testutil::constant(1, 1), make_vec({0, 0}), make_vec({1, 1}), 0.1), Error);
  }
}
