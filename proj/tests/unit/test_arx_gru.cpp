#include <doctest.h>

#include <cmath>
#include <random>

#include "hemadyn/arx_gru.hpp"
#include "hemadyn/errors.hpp"
#include "test_util.hpp"

using namespace hemadyn;

namespace {

GruNet random_net(int h, std::uint64_t seed, double scale = 0.5) {
  auto net = init_gru(h, seed);
  std::mt19937_64 rng(seed ^ 0x9e37);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& p : net.parameters()) p += scale * u(rng);
  return net;
}

ArxSeries synthetic_series(int days, int every, int shift = 0) {
  ArxSeries s;
  s.schedule = TreatmentSchedule({{shift + 0, 1.0}, {shift + 1, 0.5}, {shift + 21, 1.0}}, {shift + 0, shift + 21}, 21);
  s.baseline = std::log(250e9);
  for (int d = 0; d < days; d += every)
    s.observed.push_back({shift + d, s.baseline - 0.6 * std::sin(d * 0.3) * std::exp(-0.02 * d)});
  return s;
}

double worst_fd_error(const ArxObjective& obj, const std::vector<double>& theta) {
  std::vector<double> g(obj.dimension());
  obj.loss_and_gradient(theta, g);
  double gmax = 0.0;
  for (double v : g) gmax = std::max(gmax, std::abs(v));
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto a = theta, b = theta;
    a[i] += h;
    b[i] -= h;
    worst = std::max(worst, testutil::rel_err(g[i], (obj.loss(a) - obj.loss(b)) / (2 * h), 1e-4 * gmax));
  }
  return worst;
}

}  // namespace

TEST_CASE("parameter layout") {
  for (int h : {1, 3, 8}) {
    CHECK(GruNet::parameter_count(h) == static_cast<std::size_t>(3 * (h * (2 + h) + h) + h + 1));
    const auto net = random_net(h, 1);
    std::vector<double> flat(net.parameters().begin(), net.parameters().end());
    CHECK(GruNet(h, flat) == net);
  }
  CHECK_THROWS_AS(GruNet(3, std::vector<double>(5)), PreconditionError);
  // weights exclude the three gate biases and the readout bias
  const GruNet n(2);
  std::size_t weights = 0;
  for (std::size_t i = 0; i < n.parameter_count(); ++i) weights += n.is_weight(i);
  CHECK(weights == 3 * 2 * 4 + 2);
}

TEST_CASE("hand-evaluated gate equations") {
  const GruNet zero(3);
  const std::vector<double> h{0.4, -1.0, 2.0};
  const auto r = gru_step(zero, std::vector<double>{0.7, 1.0}, h);
  for (int i = 0; i < 3; ++i) CHECK(r.hidden[i] == 0.5 * h[i]);
  CHECK(r.output == 0.0);

  auto biased = zero;
  biased.parameters().back() = 0.25;
  const auto r0 = gru_step(biased, std::vector<double>{0.7, 1.0}, std::vector<double>(3, 0.0));
  for (double v : r0.hidden) CHECK(v == 0.0);
  CHECK(r0.output == 0.25);
}

TEST_CASE("single-step gradient against central differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int H = 2 + trial % 4;
    const auto net = random_net(H, 77 + trial);
    const std::vector<double> x{u(rng), u(rng)};
    std::vector<double> h(H), gh(H);
    for (auto& v : h) v = u(rng);
    for (auto& v : gh) v = u(rng);
    const double gy = u(rng);
    // scalar functional: gy * output + gh . h'
    auto functional = [&](const GruNet& n, const std::vector<double>& xx, const std::vector<double>& hh) {
      const auto r = gru_step(n, xx, hh);
      double f = gy * r.output;
      for (int i = 0; i < H; ++i) f += gh[i] * r.hidden[i];
      return f;
    };
    GruStepCache c;
    gru_step(net, x, h, c);
    std::vector<double> gp(net.parameter_count(), 0.0), gx(2), ghp(H);
    gru_step_backward(net, c, gy, gh, gp, gx, ghp);
    const double eps = 1e-6;
    const double floor = 1e-4;
    double worst = 0.0;
    for (std::size_t i = 0; i < net.parameter_count(); ++i) {
      auto a = net, b = net;
      a.parameters()[i] += eps;
      b.parameters()[i] -= eps;
      worst = std::max(worst, testutil::rel_err(gp[i], (functional(a, x, h) - functional(b, x, h)) / (2 * eps), floor));
    }
    for (int i = 0; i < 2; ++i) {
      auto a = x, b = x;
      a[i] += eps;
      b[i] -= eps;
      worst = std::max(worst, testutil::rel_err(gx[i], (functional(net, a, h) - functional(net, b, h)) / (2 * eps), floor));
    }
    for (int i = 0; i < H; ++i) {
      auto a = h, b = h;
      a[i] += eps;
      b[i] -= eps;
      worst = std::max(worst, testutil::rel_err(ghp[i], (functional(net, x, a) - functional(net, x, b)) / (2 * eps), floor));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("rollout modes") {
  ArxConfig cfg;
  const auto s = synthetic_series(40, 1);
  SUBCASE("zero net is constant at the readout bias") {
    GruNet net(4);
    net.parameters().back() = 0.2;
    const auto p = rollout(net, s, 0, 30, false, cfg);
    for (double v : p.values) CHECK(v == doctest::Approx(s.baseline + cfg.scale * 0.2).epsilon(1e-15));
  }
  SUBCASE("pass-through net without treatment stays at baseline") {
    GruNet net(1);
    auto p = net.parameters();
    p[net.gate_offset(0) + 3] = -20.0;  // update gate bias: z ~ 0
    p[net.gate_offset(2) + 0] = 1.0;    // candidate reads the previous value
    p[net.readout_offset()] = 1.0;
    ArxSeries quiet = s;
    quiet.schedule = TreatmentSchedule({}, {0, 21}, 21);
    const auto out = rollout(net, quiet, 0, 30, false, cfg);
    for (double v : out.values) CHECK(std::abs(v - quiet.baseline) < 1e-3);
  }
  SUBCASE("teacher forcing agrees with closed loop until the first observation") {
    const auto net = random_net(5, 3);
    ArxSeries sparse = synthetic_series(40, 7);
    const auto tf = rollout(net, sparse, 0, 39, true, cfg);
    const auto cl = rollout(net, sparse, 0, 39, false, cfg);
    CHECK(tf.at(0) == cl.at(0));
    CHECK(tf.at(1) != cl.at(1));
    CHECK(tf.at(8) != cl.at(8));
  }
  SUBCASE("determinism and calendar shift") {
    const auto net = random_net(6, 9);
    const auto a = rollout(net, s, 0, 35, false, cfg);
    CHECK(a.values == rollout(net, s, 0, 35, false, cfg).values);
    const auto shifted = synthetic_series(40, 1, 10);
    const auto b = rollout(net, shifted, 10, 45, false, cfg);
    for (int d = 0; d <= 35; ++d) CHECK(b.at(d + 10) == a.at(d));
  }
  SUBCASE("non-finite prediction names the day") {
    GruNet net(2);
    net.parameters().back() = std::nan("");
    CHECK_THROWS_AS(rollout(net, s, 0, 5, false, cfg), NumericalError);
  }
}

TEST_CASE("loss values") {
  ArxConfig cfg;
  cfg.l2 = 0.0;
  ArxTrainingSeries ts;
  ts.series = synthetic_series(20, 3);
  for (auto& o : ts.series.observed) o.value = ts.series.baseline;
  ts.targets = ts.series.observed;
  SUBCASE("constant data and constant net") {
    ArxObjective obj(3, {ts}, cfg);
    CHECK(obj.loss(GruNet(3).parameters()) == 0.0);
  }
  SUBCASE("l2 on weights only") {
    cfg.l2 = 0.5;
    ArxObjective obj(3, {ts}, cfg);
    const auto net = random_net(3, 4);
    ArxConfig no_l2 = cfg;
    no_l2.l2 = 0.0;
    ArxObjective plain(3, {ts}, no_l2);
    CHECK(obj.loss(net.parameters()) - plain.loss(net.parameters()) ==
          doctest::Approx(0.5 * net.weight_norm_squared()).epsilon(1e-12));
  }
  SUBCASE("baseline penalty windows") {
    GruNet net(2);
    net.parameters().back() = 0.4;  // constant offset 0.2 in log space
    cfg.baseline_penalty = 2.0;
    ArxObjective all(2, {ts}, cfg);
    cfg.baseline_all_days = false;
    ArxObjective pre(2, {ts}, cfg);
    ArxConfig none = cfg;
    none.baseline_penalty = 0.0;
    ArxObjective plain(2, {ts}, none);
    const double base = plain.loss(net.parameters());
    CHECK(all.loss(net.parameters()) - base == doctest::Approx(2.0 * 0.04).epsilon(1e-12));
    CHECK(pre.loss(net.parameters()) - base == doctest::Approx(2.0 * 0.04).epsilon(1e-12));
  }
}

TEST_CASE("bptt gradient through closed-loop rollouts") {
  int instance = 0;
  for (int days : {20, 60}) {
    for (int trial = 0; trial < 10; ++trial, ++instance) {
      ArxConfig cfg;
      cfg.l2 = 1e-3;
      cfg.baseline_penalty = 0.1 * trial;
      cfg.baseline_all_days = trial % 2 == 0;
      ArxTrainingSeries ts;
      ts.series = synthetic_series(days, 1 + trial % 3);
      ts.targets = ts.series.observed;
      ts.teacher_forcing = trial % 4 == 3;
      const int H = 3 + trial % 3;
      ArxObjective obj(H, {ts}, cfg);
      const auto net = random_net(H, 1000 + instance, 0.3);
      std::vector<double> theta(net.parameters().begin(), net.parameters().end());
      CAPTURE(days);
      CAPTURE(trial);
      CHECK(worst_fd_error(obj, theta) < 1e-4);
    }
  }
}

TEST_CASE("record-level loss and gradient") {
  PatientRecord r;
  r.id = "g";
  r.schedule = TreatmentSchedule::regular(4, 14, 1);
  for (int c = 0; c < 4; ++c)
    for (double t : {1.0, 6.0, 10.0}) r.observations.push_back({c * 14 + t, 2.5e11 * (1.0 - 0.03 * t)});
  const auto split = split_by_cycles(r, 2);
  const auto net = random_net(4, 8);
  ArxConfig cfg;
  cfg.hidden = 4;
  const double l = arx_loss(net, r, cfg, split);
  CHECK(std::isfinite(l));
  const auto g = arx_gradient(net, r, cfg, split);
  CHECK(g.size() == net.parameter_count());
  const auto lr = log_transform(r);
  CHECK(arx_loss(net, lr, cfg, split_by_cycles(lr, 2)) == doctest::Approx(l).epsilon(1e-12));
}
