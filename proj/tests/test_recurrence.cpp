#include <cmath>

#include "doctest.h"
#include "steerkit/errors.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/json_util.hpp"
#include "steerkit/recurrence.hpp"
#include "util.hpp"

using namespace steerkit;

namespace {

// Closed-orbit period by an independent section crossing: the first upward
// crossing of the horizontal line through x0 with the same velocity sign,
// bisected on the RK-accurate dense state.
double period_oracle(const VectorField& V, const Vec& x0, double T_guess) {
  Settings s = Settings::with(Method::dop853, 1e-12);
  Trajectory tr = integrate(V, x0, 0.0, 1.5 * T_guess, s);
  const double sign = V(x0)[1] > 0 ? 1.0 : -1.0;
  auto g = [&](double t) { return tr.state_at(t)[1] - x0[1]; };
  for (size_t i = 1; i < tr.size(); ++i) {
    double a = tr.times()[i - 1], b = tr.times()[i];
    if (a < 0.5 * T_guess) continue;
    if (sign * g(a) < 0 && sign * g(b) >= 0) {
      for (int k = 0; k < 200 && b - a > 1e-14; ++k) {
        double m = 0.5 * (a + b);
        (sign * g(m) < 0 ? a : b) = m;
      }
      return 0.5 * (a + b);
    }
  }
  return NAN;
}

}  // namespace

TEST_SUITE("recurrence") {
  TEST_CASE("rotation: every point returns after 2 pi") {
    RecurrenceResult r = find_poisson_stable(testutil::rotation(), make_vec({1, 0}), 0.1, 1e-6, 1.0, 10.0);
    CHECK(std::abs(r.return_time - 2 * M_PI) < 1e-6);
    CHECK(r.return_error < 1e-6);
    CHECK(r.return_error >= 0.0);
    CHECK(r.return_time >= 1.0);
    CHECK((r.point - make_vec({1, 0})).norm() < 0.1);
  }

  TEST_CASE("cellular closed orbit: return time equals the oracle period") {
    VectorField V = testutil::cellular();
    RecurrenceResult r = find_poisson_stable(V, make_vec({M_PI / 2 + 0.3, M_PI / 2}), 0.05, 1e-4, 1.0, 100.0);
    double T = period_oracle(V, r.point, r.return_time);
    REQUIRE(std::isfinite(T));
    // a return within radius r pins the time to about r / |V|
    CHECK(std::abs(r.return_time - T) < 2e-4 / V(r.point).norm());
  }

  TEST_CASE("constant field never returns") {
    VectorField C = testutil::constant(0.6, 0.8);
    const double T_min = 1.0, delta = 0.05;
    try {
      find_poisson_stable(C, make_vec({0, 0}), delta, 1e-3, T_min, 100.0);
      FAIL("expected NoReturnFound");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NoReturnFound);
      CHECK(num_from(e.details().at("best_miss")) >= T_min * 1.0 - 2 * delta);
    }
  }

  TEST_CASE("invalid arguments are rejected") {
    CHECK_THROWS_AS(find_poisson_stable(testutil::rotation(), make_vec({1, 0}), 0.0, 1e-3, 1, 10), Error);
    CHECK_THROWS_AS(find_poisson_stable(testutil::rotation(), make_vec({1, 0}), 0.1, 1e-3, 10, 1), Error);
  }

  TEST_CASE("backward search on the rotation agrees with forward") {
    RecurrenceOptions o;
    o.direction = TimeDirection::backward;
    RecurrenceResult b = find_poisson_stable(testutil::rotation(), make_vec({0, 2}), 0.1, 1e-6, 1.0, 10.0, o);
    RecurrenceResult f = find_poisson_stable(testutil::rotation(), make_vec({0, 2}), 0.1, 1e-6, 1.0, 10.0);
    CHECK(b.direction == TimeDirection::backward);
    CHECK(std::abs(b.return_time - f.return_time) < 1e-6);
  }

  TEST_CASE("returned results re-validate under independent re-integration") {
    VectorField V = testutil::cellular();
    RecurrenceResult r = find_poisson_stable(V, make_vec({1.0, 2.0}), 0.05, 1e-4, 1.0, 100.0);
    Settings s = RecurrenceOptions{}.settings;
    Trajectory tr = integrate(V, r.point, 0.0, r.return_time, s);
    double err = (tr.states().back() - r.point).norm();
    CHECK(std::abs(err - r.return_error) <= 2 * tr.tol_budget + 1e-12);
  }

  TEST_CASE("candidate sampling is deterministic and JSON round-trips") {
    RecurrenceOptions o;
    o.include_center = false;
    o.seed = 42;
    RecurrenceResult a = find_poisson_stable(testutil::cellular(), make_vec({1.0, 2.0}), 0.05, 1e-4, 1.0, 100.0, o);
    RecurrenceResult b = find_poisson_stable(testutil::cellular(), make_vec({1.0, 2.0}), 0.05, 1e-4, 1.0, 100.0, o);
    CHECK(same_vec(a.point, b.point));
    CHECK(a.return_time == b.return_time);
    RecurrenceResult c = RecurrenceResult::from_json(nlohmann::json::parse(a.to_json().dump()));
    CHECK(same_vec(c.point, a.point));
    CHECK(c.return_time == a.return_time);
    CHECK(c.return_error == a.return_error);
    CHECK(c.direction == a.direction);
  }

  TEST_CASE("near_returns examples") {
    Settings s = Settings::with(Method::dop853, 1e-12);
    Vec x0 = make_vec({1, 0});
    Trajectory rot = integrate(testutil::rotation(), x0, 0.0, 20.0, s);
    std::vector<double> t = near_returns(rot, x0, 1e-5);
    REQUIRE(t.size() == 3);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(t[k] - 2 * M_PI * (k + 1)) < 1e-5);

    Trajectory line = integrate(testutil::constant(1, 0), x0, 0.0, 20.0, s);
    CHECK(near_returns(line, x0, 1e-3).empty());

    VectorField V = testutil::cellular();
    Vec c = make_vec({M_PI / 2 + 0.3, M_PI / 2});
    double T = period_oracle(V, c, 7.0);
    Trajectory cell = integrate(V, c, 0.0, 4.5 * T, s);
    std::vector<double> ts = near_returns(cell, c, 1e-6);
    REQUIRE(ts.size() == 4);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(ts[k] - (k + 1) * T) < 1e-4);
  }

  TEST_CASE("nonwandering_fraction examples") {
    Box box{make_vec({-1, -1}), make_vec({1, 1})};
    CHECK(nonwandering_fraction(testutil::rotation(), box, 50, 1e-3, 10.0, 3) == 1.0);
    CHECK(nonwandering_fraction(testutil::constant(1, 0), box, 50, 1e-3, 10.0, 3) == 0.0);
  }
}
