#include <doctest.h>

#include <cmath>
#include <random>

#include "hemadyn/errors.hpp"
#include "hemadyn/mech_models.hpp"
#include "test_util.hpp"

using namespace hemadyn;

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

TreatmentSchedule chop14(int cycles = 6) { return TreatmentSchedule::regular(cycles, 14, 5); }

std::vector<double> nadirs(const Trajectory& tr, int cycles, int len) {
  std::vector<double> out;
  for (int c = 0; c < cycles; ++c) {
    double m = INFINITY;
    for (int d = c * len; d < (c + 1) * len && d <= tr.last_day(); ++d) m = std::min(m, tr.platelets(d));
    out.push_back(m);
  }
  return out;
}

}  // namespace

TEST_CASE("drug effect") {
  const TreatmentSchedule s({{0, 1.0}, {1, 0.5}}, {0}, 14);
  CHECK(drug_effect(0.0, s, 2.0) == 2.0);
  CHECK(drug_effect(0.7, s, 2.0) == 2.0);
  CHECK(drug_effect(1.2, s, 2.0) == 1.0);
  CHECK(drug_effect(2.0, s, 2.0) == 0.0);
}

TEST_CASE("population parameters") {
  const auto f = MechParams::population(MechModel::Friberg);
  CHECK(f.core.gamma == 0.316);
  CHECK(f.core.k_tr() == doctest::Approx(0.492307692).epsilon(1e-8));
  CHECK(MechParams::population(MechModel::MSRev).core.e_eff == 120.0);
  CHECK(MechParams::population(MechModel::MSRev).k_cyc2 == doctest::Approx(1.9 / 60));
  CHECK(mech_model_from_string("ms-rev") == MechModel::MSRev);
  CHECK_THROWS_AS(mech_model_from_string("foo"), PreconditionError);
}

TEST_CASE("steady states") {
  for (auto m : {MechModel::Friberg, MechModel::Henrich, MechModel::MS, MechModel::MSRev}) {
    const auto p = MechParams::population(m);
    const auto x = steady_state(p);
    REQUIRE(x.size() == state_dimension(m));
    std::vector<double> dx(x.size());
    mech_rhs(p, x, 0.0, dx);
    CHECK(norm(dx) / norm(x) < 1e-12);
    CHECK(x.back() == 270e9);
  }
  const auto ms = steady_state(MechParams::population(MechModel::MS));
  CHECK(ms[0] == doctest::Approx(270e9 / 0.58));
  CHECK(ms[0] == doctest::Approx(4.655e11).epsilon(1e-3));
  CHECK(ms[1] == doctest::Approx(ms[2]));
  const auto rev = steady_state(MechParams::population(MechModel::MSRev));
  CHECK(rev[2] == doctest::Approx(60.0 * rev[1]).epsilon(1e-12));
  for (double v : steady_state(MechParams::population(MechModel::Friberg))) CHECK(v == 270e9);
}

TEST_CASE("friberg rhs under drug at steady state") {
  const auto p = MechParams::population(MechModel::Friberg);
  const auto x = steady_state(p);
  std::vector<double> dx(5);
  friberg_rhs(p.core, x, 2.0, dx);
  CHECK(dx[0] == doctest::Approx(-2.0 * p.core.k_tr() * 270e9).epsilon(1e-12));
  std::vector<double> bad = x;
  bad.back() = 0.0;
  CHECK_THROWS_AS(friberg_rhs(p.core, bad, 0.0, dx), DomainError);
}

TEST_CASE("reduction identities on random states") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  auto fr = MechParams::population(MechModel::Friberg);
  auto he = MechParams::population(MechModel::Henrich);
  he.f_tr = 1.0;
  auto ms = MechParams::population(MechModel::MS);
  ms.f_p = 1.0;
  ms.k_cyc = 0.0;
  ms.core = fr.core;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> xf(5);
    for (auto& v : xf) v = 270e9 * u(rng);
    const double e = u(rng) - 0.2;
    std::vector<double> df(5), dh(6), dm(7);
    friberg_rhs(fr.core, xf, e, df);
    std::vector<double> xh{270e9 * u(rng)};
    xh.insert(xh.end(), xf.begin(), xf.end());
    henrich_rhs(he, xh, e, dh);
    std::vector<double> xm{xf[0], 1e9 * u(rng), 1e9 * u(rng), xf[1], xf[2], xf[3], xf[4]};
    ms_rhs(ms, xm, e, dm);
    for (int k = 0; k < 5; ++k) {
      CHECK(testutil::rel_err(dh[k + 1], df[k], 1.0) < 1e-12);
      CHECK(testutil::rel_err(dm[k == 0 ? 0 : k + 2], df[k], 1.0) < 1e-12);
    }
  }
}

TEST_CASE("reduced models match friberg trajectories") {
  const auto s = chop14();
  const auto fr = MechParams::population(MechModel::Friberg);
  auto he = MechParams::population(MechModel::Henrich);
  he.f_tr = 1.0;
  auto ms = MechParams::population(MechModel::MS);
  ms.f_p = 1.0;
  ms.k_cyc = 0.0;
  const auto a = simulate(fr, s, 120), b = simulate(he, s, 120), c = simulate(ms, s, 120);
  for (int d = 0; d <= 120; ++d) {
    CHECK(testutil::rel_err(b.platelets(d), a.platelets(d)) < 1e-9);
    CHECK(testutil::rel_err(c.platelets(d), a.platelets(d)) < 1e-9);
  }
}

TEST_CASE("simulation shapes") {
  const auto fr = MechParams::population(MechModel::Friberg);
  SUBCASE("no treatment stays at C0") {
    const auto tr = simulate(fr, TreatmentSchedule({}, {0}, 14), 60);
    for (int d = 0; d <= 60; ++d) CHECK(testutil::rel_err(tr.platelets(d), 270e9) < 1e-12);
  }
  SUBCASE("single course: nadir after dosing, then recovery") {
    const TreatmentSchedule one({{0, 1}, {1, 1}, {2, 1}, {3, 1}, {4, 1}}, {0}, 14);
    const auto tr = simulate(fr, one, 60);
    int argmin = 0;
    for (int d = 0; d <= 60; ++d)
      if (tr.platelets(d) < tr.platelets(argmin)) argmin = d;
    CHECK(argmin > 4);
    CHECK(argmin < 40);
    CHECK(tr.platelets(argmin) < 0.5 * 270e9);
    CHECK(tr.platelets(60) > 2.0 * tr.platelets(argmin));
  }
  SUBCASE("MS accumulates toxicity, Friberg does not trend") {
    auto fr2 = fr;
    fr2.core.e_eff = 0.4;
    auto ms = MechParams::population(MechModel::MS);
    ms.core.e_eff = 0.4;
    const auto s = TreatmentSchedule::regular(6, 14, 1);
    const auto nf = nadirs(simulate(fr2, s, 84), 6, 14);
    const auto nm = nadirs(simulate(ms, s, 84), 6, 14);
    CHECK(nm[5] < nm[1]);
    CHECK(std::abs(nf[5] - nf[4]) / nf[4] < std::abs(nm[5] - nm[4]) / nm[4] + 0.05);
  }
  SUBCASE("horizon shorter than schedule") {
    CHECK_THROWS_AS(simulate(fr, chop14(), 30), PreconditionError);
  }
}

TEST_CASE("monotone toxicity and non-negativity sweep") {
  const TreatmentSchedule s({{0, 1}, {1, 1}, {2, 1}}, {0}, 21);
  double previous = INFINITY;
  for (double e : {0.05, 0.25, 0.5, 0.75, 1.0}) {
    auto p = MechParams::population(MechModel::Friberg);
    p.core.e_eff = e;
    const auto tr = simulate(p, s, 120);
    double m = INFINITY;
    for (double v : tr.states) {
      CHECK(v >= 0.0);
      m = std::min(m, v);
    }
    const auto n = nadirs(tr, 1, 120)[0];
    CHECK(n <= previous);
    previous = n;
  }
}
