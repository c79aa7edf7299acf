#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hemadyn/errors.hpp"
#include "hemadyn/eval.hpp"
#include "test_util.hpp"

using namespace hemadyn;

namespace {

/// Brute-force one-sided signed-rank p-value: enumerate all 2^n sign
/// patterns of the (mid-)ranks and count W+ >= observed.
double brute_force_p(const std::vector<double>& best, const std::vector<double>& other) {
  std::vector<double> d;
  for (std::size_t i = 0; i < best.size(); ++i)
    if (other[i] - best[i] != 0.0) d.push_back(other[i] - best[i]);
  const std::size_t n = d.size();
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) below += 1;
      if (std::abs(d[j]) == std::abs(d[i])) equal += 1;
    }
    ranks[i] = below + (equal + 1) / 2.0;
  }
  double w = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w += ranks[i];
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += ranks[i];
    if (s >= w - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(std::size_t{1} << n);
}

FitResult constant_fit(double log_level) {
  // an untrained ARX net outputs exactly its baseline
  FitResult f;
  f.model = ModelId::ArxGru;
  f.parameters = ArxFit{GruNet(2), ArxConfig{}, log_level};
  return f;
}

PatientRecord flat_record(double level) {
  PatientRecord rec;
  rec.id = "flat";
  rec.schedule = TreatmentSchedule::regular(4, 14);
  for (int c = 0; c < 4; ++c)
    for (int k : {0, 5, 10}) rec.observations.push_back({static_cast<double>(14 * c + k), level});
  rec.group = classify_group(rec);
  return rec;
}

}  // namespace

TEST_CASE("wilcoxon all positive n = 5") {
  const std::vector<double> best{1, 1, 1, 1, 1}, other{2, 3, 4, 5, 6};
  REQUIRE(wilcoxon_one_sided(best, other).has_value());
  CHECK(*wilcoxon_one_sided(best, other) == 0.03125);
  // the reverse direction is as unlikely as it gets
  CHECK(*wilcoxon_one_sided(other, best) == 1.0);
}

TEST_CASE("wilcoxon degenerate inputs") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  CHECK_FALSE(wilcoxon_one_sided(a, a).has_value());
  // four nonzero pairs are too few
  CHECK_FALSE(wilcoxon_one_sided(a, std::vector<double>{2, 3, 4, 5, 5, 6}).has_value());
  CHECK_THROWS_AS(wilcoxon_one_sided(a, std::vector<double>{1, 2}), PreconditionError);
}

TEST_CASE("wilcoxon exact p matches brute-force enumeration") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 3);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int n = 5 + trial % 6;
    std::vector<double> best(n), other(n);
    for (int i = 0; i < n; ++i) {
      best[i] = u(rng);
      // every other trial uses coarse values to force ties and zeros
      other[i] = trial % 2 ? best[i] + 0.5 * (pick(rng) - 1.5) : best[i] + u(rng) + 0.2;
    }
    const auto p = wilcoxon_one_sided(best, other);
    if (!p) continue;
    CHECK(std::abs(*p - brute_force_p(best, other)) < 1e-12);
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("wilcoxon normal approximation agrees with the exact tail") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> best(40), other(40);
  for (int i = 0; i < 40; ++i) {
    best[i] = z(rng);
    other[i] = best[i] + 0.3 + z(rng);
  }
  const double approx = *wilcoxon_one_sided(best, other);
  // exact at n = 25 and the approximation at n = 26 give similar tails
  CHECK(approx > 0.0);
  CHECK(approx < 0.2);
  std::vector<double> b25(best.begin(), best.begin() + 25), o25(other.begin(), other.begin() + 25);
  std::vector<double> b26(best.begin(), best.begin() + 26), o26(other.begin(), other.begin() + 26);
  const double exact25 = *wilcoxon_one_sided(b25, o25), approx26 = *wilcoxon_one_sided(b26, o26);
  CHECK(std::abs(exact25 - approx26) < 0.05);
}

TEST_CASE("test_smse on constructed cases") {
  const double base = std::log(250e9);
  auto rec = flat_record(250e9);
  auto split = split_by_cycles(rec, 2);
  CHECK(test_smse(constant_fit(base), rec, split) == doctest::Approx(0.0).epsilon(1e-15));

  // one test point a full log unit below baseline
  rec.observations[7].platelet_count = 250e9 / std::exp(1.0);
  split = split_by_cycles(rec, 2);
  const auto single = [&] {
    CycleSplit s = split;
    s.test_obs = {rec.observations[7]};
    return s;
  }();
  CHECK(test_smse(constant_fit(base), rec, single) == doctest::Approx(1.6).epsilon(1e-12));

  // training data never enters
  auto perturbed = rec;
  perturbed.observations[1].platelet_count *= 3.0;
  CHECK(test_smse(constant_fit(base), perturbed, split_by_cycles(perturbed, 2)) ==
        test_smse(constant_fit(base), rec, split));

  CycleSplit empty = split;
  empty.test_obs.clear();
  CHECK_THROWS_AS(test_smse(constant_fit(base), rec, empty), PreconditionError);
}

TEST_CASE("aggregate flags and means") {
  std::vector<ScoreEntry> s;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "p" + std::to_string(i);
    s.push_back({id, Group::De14, ModelId::Friberg, 1, 0.5 + 0.01 * i});
    s.push_back({id, Group::De14, ModelId::ArxGru, 1, 0.4 + 0.01 * i});
    s.push_back({id, Group::De14, ModelId::Henrich, 1, 0.4 + 0.01 * i});
  }
  s.push_back({"q", Group::Sp21, ModelId::Friberg, 2, 0.7});
  const auto r = aggregate(s, {ModelId::Friberg, ModelId::Henrich, ModelId::ArxGru}, {1, 2}, {Group::De14, Group::Sp21});
  CHECK(r.cells.size() == 12);
  const auto& f = r.cell(ModelId::Friberg, Group::De14, 1);
  CHECK(*f.mean == doctest::Approx(0.525));
  CHECK_FALSE(f.best);
  // tie: both flagged
  CHECK(r.cell(ModelId::ArxGru, Group::De14, 1).best);
  CHECK(r.cell(ModelId::Henrich, Group::De14, 1).best);
  // Friberg is worse for all six patients: p = 1/64
  REQUIRE(f.p_value.has_value());
  CHECK(*f.p_value == doctest::Approx(1.0 / 64.0));
  CHECK_FALSE(f.not_inferior);
  // single patient cell
  const auto& q = r.cell(ModelId::Friberg, Group::Sp21, 2);
  CHECK(*q.mean == 0.7);
  CHECK(q.best);
  CHECK_FALSE(r.cell(ModelId::ArxGru, Group::Sp21, 2).mean.has_value());
  CHECK_FALSE(r.cell(ModelId::ArxGru, Group::Sp21, 1).best);

  // best implies not inferior; permutation invariance
  for (const auto& c : r.cells)
    if (c.best) CHECK(c.not_inferior);
  auto shuffled = s;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(2));
  const auto r2 = aggregate(shuffled, r.models, r.n_train, r.groups);
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    CHECK(r.cells[i].mean == r2.cells[i].mean);
    CHECK(r.cells[i].best == r2.cells[i].best);
    CHECK(r.cells[i].p_value == r2.cells[i].p_value);
  }

  s.push_back(s.front());
  CHECK_THROWS_AS(aggregate(s, r.models, r.n_train, r.groups), PreconditionError);
}

TEST_CASE("emit_report shapes and determinism") {
  testutil::TempDir dir("eval");
  std::vector<ScoreEntry> s;
  const std::vector<Group> groups{Group::De14, Group::De21, Group::Sp14, Group::Sp21};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Group g : groups)
    for (ModelId m : all_model_ids())
      for (int n = 1; n <= 5; ++n)
        for (int p = 0; p < 3; ++p) s.push_back({"p" + std::to_string(p), g, m, n, u(rng)});
  auto r = aggregate(s, all_model_ids(), {1, 2, 3, 4, 5}, groups);
  r.seed = 42;
  r.config_hash = "abc";
  emit_report(r, dir.path() / "a");
  emit_report(r, dir.path() / "b");
  for (Group g : groups) {
    const auto name = "heatmap_" + std::string(to_string(g)) + ".csv";
    const auto text = testutil::read_file(dir.path() / "a" / name);
    CHECK(std::count(text.begin(), text.end(), '\n') == 8);
    CHECK(text.substr(0, text.find('\n')) == "model,n_train_1,n_train_2,n_train_3,n_train_4,n_train_5");
    CHECK(text == testutil::read_file(dir.path() / "b" / name));
  }
  for (const char* f : {"significance.csv", "scores_long.csv", "metadata.json"})
    CHECK(testutil::read_file(dir.path() / "a" / f) == testutil::read_file(dir.path() / "b" / f));
  CHECK(testutil::read_file(dir.path() / "a" / "metadata.json").find("\"seed\": 42") != std::string::npos);

  // empty model set: header-only files
  const auto empty = aggregate({}, {}, {1, 2}, {Group::De14});
  emit_report(empty, dir.path() / "c");
  CHECK(testutil::read_file(dir.path() / "c" / "heatmap_De14.csv") == "model,n_train_1,n_train_2\n");
  CHECK(testutil::read_file(dir.path() / "c" / "scores_long.csv") == "patient_id,group,model,n_train,smse\n");
}

TEST_CASE("format_double round trips") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e12, 1e12);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, i % 20 - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
}
