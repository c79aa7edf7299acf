#include <doctest.h>

#include <cmath>

#include "hemadyn/errors.hpp"
#include "hemadyn/ode.hpp"
#include "test_util.hpp"

using namespace hemadyn;

namespace {

OdeProblem decay(double y0, int t1) {
  OdeProblem p;
  p.dimension = 1;
  p.rhs = [](double, std::span<const double> x, double e, std::span<double> dx) { dx[0] = -(1.0 + e) * x[0]; };
  p.initial_state = {y0};
  p.t0 = 0;
  p.t1 = t1;
  return p;
}

}  // namespace

TEST_CASE("exponential decay against e^-1") {
  const auto tr = integrate_rk4(decay(1.0, 1));
  REQUIRE(tr.n_days() == 2);
  CHECK(std::abs(tr.platelets(1) - std::exp(-1.0)) < 1e-6);
  CHECK(std::abs(tr.platelets(1) - 0.367879) < 1e-6);
}

TEST_CASE("zero and constant fields") {
  OdeProblem p;
  p.dimension = 2;
  p.rhs = [](double, std::span<const double>, double, std::span<double> dx) { dx[0] = 0.0, dx[1] = 1.0; };
  p.initial_state = {3.0, 0.0};
  p.t1 = 10;
  const auto tr = integrate_rk4(p);
  for (int d = 0; d <= 10; ++d) CHECK(tr.state(d)[0] == 3.0);
  CHECK(std::abs(tr.platelets(10) - 10.0) < 1e-12);
}

TEST_CASE("empirical order of convergence") {
  // error at t = 2 with step h and h/2
  const double exact = std::exp(-2.0);
  const double e1 = std::abs(integrate_rk4(decay(1.0, 2), 1.0 / 2).platelets(2) - exact);
  const double e2 = std::abs(integrate_rk4(decay(1.0, 2), 1.0 / 4).platelets(2) - exact);
  CHECK(std::log2(e1 / e2) >= 3.8);
}

TEST_CASE("step must divide a day") {
  CHECK(substeps_per_day(1.0 / 24) == 24);
  CHECK_THROWS_AS(substeps_per_day(0.3), PreconditionError);
  CHECK_THROWS_AS(substeps_per_day(-1.0), PreconditionError);
}

TEST_CASE("piecewise integration") {
  const auto p = decay(1.0, 20);
  SUBCASE("no events equals plain rk4") {
    const TreatmentSchedule none({}, {0}, 14);
    const auto a = integrate_piecewise(p, none, 2.0);
    const auto b = integrate_rk4(p);
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t i = 0; i < a.states.size(); ++i) CHECK(std::abs(a.states[i] - b.states[i]) <= 1e-14);
  }
  SUBCASE("one-day effect: analytic piecewise exponential") {
    const TreatmentSchedule s({{5, 1.0}}, {0}, 14);
    const auto tr = integrate_piecewise(p, s, 2.0);
    // rate 1 except rate 3 on [5, 6); RK4 local error at rate 3 is ~(3h)^5/120 per step
    CHECK(testutil::rel_err(tr.platelets(5), std::exp(-5.0)) < 1e-6);
    CHECK(testutil::rel_err(tr.platelets(6), std::exp(-8.0)) < 2e-5);
    CHECK(testutil::rel_err(tr.platelets(9), std::exp(-11.0)) < 2e-5);
    // kinks: left/right slopes of ln y differ at days 5 and 6
    const auto ly = [&](int d) { return std::log(tr.platelets(d)); };
    CHECK(std::abs((ly(5) - ly(4)) - (ly(6) - ly(5))) > 1.0);
    CHECK(std::abs((ly(6) - ly(5)) - (ly(7) - ly(6))) > 1.0);
  }
  SUBCASE("same-day events are summed once") {
    const TreatmentSchedule twice({{5, 0.5}, {5, 0.5}}, {0}, 14);
    const TreatmentSchedule once({{5, 1.0}}, {0}, 14);
    CHECK(integrate_piecewise(p, twice, 2.0).states == integrate_piecewise(p, once, 2.0).states);
  }
}

TEST_CASE("non-finite state reports time") {
  OdeProblem p;
  p.dimension = 1;
  p.rhs = [](double, std::span<const double> x, double, std::span<double> dx) { dx[0] = x[0] * x[0]; };
  p.initial_state = {1.0};
  p.t1 = 5;
  try {
    integrate_rk4(p, 0.5);
    FAIL("expected IntegrationError");
  } catch (const IntegrationError& e) {
    CHECK(e.time() <= 5.0);
  }
}

TEST_CASE("trajectory csv and determinism") {
  testutil::TempDir dir("ode");
  const auto a = integrate_rk4(decay(2.0, 4));
  write_trajectory_csv(a, dir / "a.csv");
  write_trajectory_csv(integrate_rk4(decay(2.0, 4)), dir / "b.csv");
  const auto text = testutil::read_file(dir / "a.csv");
  CHECK(text == testutil::read_file(dir / "b.csv"));
  CHECK(text.rfind("day,compartment_0,platelets\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}
