#include <doctest.h>

#include <cmath>
#include <random>

#include "hemadyn/core_data.hpp"
#include "hemadyn/errors.hpp"
#include "test_util.hpp"

using namespace hemadyn;

namespace {

// Observation rows for one patient: `per_cycle` samples in each of `cycles` cycles.
std::string obs_rows(const std::string& id, int cycles, int len, int per_cycle, double base = 250e9) {
  std::string s;
  for (int c = 0; c < cycles; ++c)
    for (int k = 0; k < per_cycle; ++k) {
      const double t = c * len + 1.0 + k * (len - 2.0) / per_cycle;
      s += id + "," + std::to_string(t) + "," + std::to_string(base * (1.0 - 0.05 * k)) + "\n";
    }
  return s;
}

std::string sched_rows(const std::string& id, int cycles, int len) {
  std::string s;
  for (int c = 0; c < cycles; ++c) s += id + "," + std::to_string(c * len) + ",1,1\n";
  return s;
}

PatientRecord make_record(int cycles, int len, int per_cycle) {
  PatientRecord r;
  r.id = "p";
  r.schedule = TreatmentSchedule::regular(cycles, len);
  for (int c = 0; c < cycles; ++c)
    for (int k = 0; k < per_cycle; ++k)
      r.observations.push_back({c * len + 1.0 + k * (len - 2.0) / per_cycle, 200e9 + 1e9 * k});
  r.group = classify_group(r);
  return r;
}

}  // namespace

TEST_CASE("schedule merges same-day events and drops zero doses") {
  TreatmentSchedule s({{0, 0.5}, {0, 0.5}, {3, 0.0}, {14, 1.0}}, {0, 14}, 14);
  REQUIRE(s.events().size() == 2);
  CHECK(s.relative_dose(0) == doctest::Approx(1.0));
  CHECK(s.relative_dose(3) == 0.0);
  CHECK(s.first_event_day() == 0);
  CHECK(s.last_event_day() == 14);
  CHECK(s.calendar_end() == 28);
  CHECK(s.cycle_index(-0.5) == -1);
  CHECK(s.cycle_index(13.9) == 0);
  CHECK(s.cycle_index(20) == 1);
  CHECK_THROWS_AS(TreatmentSchedule({{0, 1}}, {0, 0}, 14), PreconditionError);
  CHECK_THROWS_AS(TreatmentSchedule({{0, -1}}, {0}, 14), PreconditionError);
  CHECK_THROWS_AS(TreatmentSchedule({{-1, 1}}, {0}, 14), PreconditionError);
}

TEST_CASE("ingest two patients") {
  testutil::TempDir dir("ingest");
  std::string obs = "patient_id,time_days,platelet_count_per_l\n";
  // rows deliberately out of order for patient b
  obs += obs_rows("a", 4, 14, 4);
  obs += "b,50.5,2e11\n";
  obs += obs_rows("b", 5, 21, 2);
  std::string sched = "patient_id,day,relative_dose,cycle_start\n" + sched_rows("a", 4, 14) + sched_rows("b", 5, 21);
  testutil::write_file(dir / "obs.csv", obs);
  testutil::write_file(dir / "sched.csv", sched);
  const auto res = ingest_patients(dir / "obs.csv", dir / "sched.csv");
  REQUIRE(res.records.size() == 2);
  CHECK(res.rejected.empty());
  CHECK(res.records[0].id == "a");
  CHECK(res.records[0].group == Group::De14);
  CHECK(res.records[1].group == Group::Sp21);
  const auto& ob = res.records[1].observations;
  for (std::size_t i = 1; i < ob.size(); ++i) CHECK(ob[i - 1].time < ob[i].time);

  SUBCASE("round trip through the writers") {
    write_observations_csv(res.records, dir / "o2.csv");
    write_schedules_csv(res.records, dir / "s2.csv");
    const auto again = ingest_patients(dir / "o2.csv", dir / "s2.csv");
    REQUIRE(again.records.size() == 2);
    CHECK(again.records[0] == res.records[0]);
    CHECK(again.records[1] == res.records[1]);
  }
}

TEST_CASE("ingest errors and rejections") {
  testutil::TempDir dir("ingest_err");
  const std::string sched = "patient_id,day,relative_dose,cycle_start\n" + sched_rows("a", 4, 14);
  testutil::write_file(dir / "sched.csv", sched);

  SUBCASE("zero count") {
    testutil::write_file(dir / "obs.csv", "patient_id,time_days,platelet_count_per_l\na,1,2e11\na,2,0\n");
    try {
      ingest_patients(dir / "obs.csv", dir / "sched.csv");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("non-positive count") != std::string::npos);
    }
  }
  SUBCASE("bad header") {
    testutil::write_file(dir / "obs.csv", "id,t,c\n");
    CHECK_THROWS_AS(ingest_patients(dir / "obs.csv", dir / "sched.csv"), ParseError);
  }
  SUBCASE("three observed cycles rejected") {
    testutil::write_file(dir / "obs.csv", "patient_id,time_days,platelet_count_per_l\n" + obs_rows("a", 3, 14, 3));
    const auto res = ingest_patients(dir / "obs.csv", dir / "sched.csv");
    CHECK(res.records.empty());
    REQUIRE(res.rejected.size() == 1);
    CHECK(res.rejected[0].patient_id == "a");
  }
  SUBCASE("missing schedule") {
    testutil::write_file(dir / "obs.csv", "patient_id,time_days,platelet_count_per_l\n" + obs_rows("z", 4, 14, 3));
    const auto res = ingest_patients(dir / "obs.csv", dir / "sched.csv");
    CHECK(res.records.empty());
    CHECK(res.rejected.size() == 2);
  }
}

TEST_CASE("log transform") {
  PatientRecord r = make_record(4, 14, 3);
  r.observations[0].platelet_count = std::exp(1.0);
  r.observations[1].platelet_count = 270e9;
  const auto l = log_transform(r);
  CHECK(l.observations[0].platelet_count == doctest::Approx(1.0).epsilon(1e-15));
  // ln(270e9) evaluated independently: ln 270 + 9 ln 10
  CHECK(l.observations[1].platelet_count == doctest::Approx(std::log(270.0) + 9 * std::log(10.0)).epsilon(1e-14));
  CHECK(l.observations[1].platelet_count == doctest::Approx(26.3216).epsilon(1e-5));
  const auto back = exp_transform(l);
  for (std::size_t i = 0; i < r.observations.size(); ++i)
    CHECK(testutil::rel_err(back.observations[i].platelet_count, r.observations[i].platelet_count) < 1e-12);
  CHECK_THROWS_AS(log_transform(l), PreconditionError);
}

TEST_CASE("split by cycles") {
  const auto r = make_record(6, 14, 4);
  const auto s1 = split_by_cycles(r, 1);
  for (const auto& o : s1.train_obs) CHECK(o.time < 14.0);
  CHECK(split_by_cycles(r, 3).boundary_day == 42.0);
  CHECK_THROWS_AS(split_by_cycles(r, 6), PreconditionError);
  CHECK_THROWS_AS(split_by_cycles(r, 0), PreconditionError);
  for (int n = 1; n < 6; ++n) {
    const auto s = split_by_cycles(r, n);
    CHECK(s.train_obs.size() + s.test_obs.size() == r.observations.size());
    CHECK(s.train_obs.back().time < s.test_obs.front().time);
  }
}

TEST_CASE("group classification") {
  CHECK(classify_group(14, 4.0) == Group::De14);
  CHECK(classify_group(21, 2.0) == Group::Sp21);
  CHECK(classify_group(14, 3.0) == Group::De14);
  CHECK(classify_group(21, 2.999) == Group::Sp21);
  CHECK(classify_group(make_record(5, 21, 3)) == Group::De21);
  CHECK(group_from_string("Sp14") == Group::Sp14);
  CHECK_THROWS_AS(group_from_string("xx"), PreconditionError);
}

TEST_CASE("validate record") {
  auto r = make_record(4, 14, 2);
  CHECK(validate_record(r).empty());
  r.observations.pop_back();
  r.observations.pop_back();
  CHECK_FALSE(validate_record(r).empty());
  auto dup = make_record(4, 14, 3);
  dup.observations[1].time = dup.observations[0].time;
  CHECK_FALSE(validate_record(dup).empty());
}

TEST_CASE("nearest day mapping") {
  CHECK(nearest_day(3.4) == 3);
  CHECK(nearest_day(3.5) == 4);
  CHECK(nearest_day(0.2) == 0);
}
