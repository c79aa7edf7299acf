#include "hemadyn/ude.hpp"

#include <algorithm>
#include <cmath>

#include "hemadyn/errors.hpp"
#include "hemadyn/objectives.hpp"

namespace hemadyn {

std::string_view to_string(UdeVariant variant) { return variant == UdeVariant::Add ? "ude-add" : "ude-rep"; }

UdeVariant ude_variant_from_string(std::string_view name) {
  if (name == "ude-add" || name == "add") return UdeVariant::Add;
  if (name == "ude-rep" || name == "rep") return UdeVariant::Rep;
  throw PreconditionError("unknown UDE variant '" + std::string(name) + "'");
}

void UdeModel::validate() const {
  MechParams mp;
  mp.core = base;
  mp.validate();
  if (!(a > 0.0)) throw PreconditionError("non-negativity scale a must be positive");
  if (net.input_size() != 3 || net.spec().layer_sizes.back() != 1)
    throw PreconditionError("UDE network must map 3 inputs to 1 output");
}

void UdeLossConfig::validate() const {
  if (!(l2 >= 0.0) || !(couple_steady >= 0.0) || !(smse_neighbor >= 0.0))
    throw PreconditionError("UDE loss weights must be non-negative");
  if (warmup_days < 0) throw PreconditionError("warmup_days must be >= 0");
  if (!(param_scale > 0.0)) throw PreconditionError("param_scale must be positive");
}

namespace {

/// Raw-parameter cotangents accumulated by the reverse pass.
struct RawGrad {
  double k_tr = 0.0, gamma = 0.0, c0 = 0.0, e_eff = 0.0;
  std::vector<double> net;
};

/// The hybrid right-hand side with its vector-Jacobian product. `u` is the
/// relative dose of the current day; the drug effect is e = e_eff * u.
struct UdeDynamics {
  UdeVariant variant;
  double k, c0, gamma, e_eff, a;
  const MlpNet* net;

  double tanh_arg(double p) const { return a * p / kTanhCellUnit; }

  void eval(std::span<const double> x, double e, double u, std::span<double> dx, MlpCache& cache) const {
    const double P = x[0], C = x[4];
    const double in[3] = {P / c0, C / c0, u};
    const double y = net->forward(in, cache);
    if (!std::isfinite(y)) throw NumericalError("non-finite network output in UDE right-hand side");
    const double tau = std::tanh(tanh_arg(P));
    if (variant == UdeVariant::Add) {
      if (!(C > 0.0)) throw DomainError("feedback term undefined for C <= 0");
      const double q = std::pow(c0 / C, gamma);
      dx[0] = k * P * (1.0 - e) * q - k * P + tau * k * c0 * y;
    } else {
      dx[0] = tau * k * c0 * y * (1.0 - e) - k * P;
    }
    dx[1] = k * P - k * x[1];
    dx[2] = k * (x[1] - x[2]);
    dx[3] = k * (x[2] - x[3]);
    dx[4] = k * (x[3] - C);
  }

  /// gx += J_x^T g ; raw parameter cotangents += J_p^T g.
  void vjp(std::span<const double> x, double e, double u, std::span<const double> g, std::span<double> gx,
           RawGrad& gp, MlpCache& cache) const {
    const double P = x[0], T1 = x[1], T2 = x[2], T3 = x[3], C = x[4];
    // transit chain
    gx[0] += k * g[1];
    gx[1] += -k * g[1] + k * g[2];
    gx[2] += -k * g[2] + k * g[3];
    gx[3] += -k * g[3] + k * g[4];
    gx[4] += -k * g[4];
    gp.k_tr += g[1] * (P - T1) + g[2] * (T1 - T2) + g[3] * (T2 - T3) + g[4] * (T3 - C);

    const double gP = g[0];
    if (gP == 0.0) return;
    const double in[3] = {P / c0, C / c0, u};
    const double y = net->forward(in, cache);
    const double tau = std::tanh(tanh_arg(P));
    const double dtau = (1.0 - tau * tau) * a / kTanhCellUnit;
    const double drug = variant == UdeVariant::Add ? 1.0 : (1.0 - e);
    const double s = k * c0 * drug;  // scale of the network output in dP/dt

    // network term N = tau * s * y
    double gin[3] = {0.0, 0.0, 0.0};
    net->backward(cache, gP * tau * s, gp.net, std::span<double>(gin, 3));
    gx[0] += gP * (dtau * s * y) + gin[0] / c0;
    gx[4] += gin[1] / c0;
    gp.c0 += gP * tau * k * drug * y - (gin[0] * P + gin[1] * C) / (c0 * c0);
    gp.k_tr += gP * tau * c0 * drug * y;

    if (variant == UdeVariant::Add) {
      const double q = std::pow(c0 / C, gamma);
      const double f = P * (1.0 - e) * q;
      gx[0] += gP * (k * (1.0 - e) * q - k);
      gx[4] += gP * (-k * f * gamma / C);
      gp.k_tr += gP * (f - P);
      gp.gamma += gP * k * f * std::log(c0 / C);
      gp.c0 += gP * k * f * gamma / c0;
      gp.e_eff += gP * (-k * P * q) * u;
    } else {
      gx[0] += gP * (-k);
      gp.k_tr += gP * (-P);
      gp.e_eff += gP * (-tau * k * c0 * y) * u;
    }
  }
};

UdeDynamics dynamics_of(const UdeModel& m) {
  return UdeDynamics{m.variant, m.base.k_tr(), m.base.c0, m.base.gamma, m.base.e_eff, m.a, &m.net};
}

}  // namespace

void ude_rhs(const UdeModel& model, std::span<const double> x, double e, std::span<double> dx) {
  MlpCache cache;
  dynamics_of(model).eval(x, e, e / model.base.e_eff, dx, cache);
}

Trajectory simulate_ude(const UdeModel& model, const TreatmentSchedule& schedule, int horizon_days,
                        const SimulationOptions& options) {
  model.validate();
  if (auto last = schedule.last_event_day(); last && horizon_days < *last)
    throw PreconditionError("horizon ends before the last treatment day");
  OdeProblem problem;
  problem.dimension = 5;
  problem.t0 = options.start_day;
  problem.t1 = horizon_days;
  problem.initial_state = options.initial_state.value_or(std::vector<double>(5, model.base.c0));
  if (problem.initial_state.size() != 5) throw PreconditionError("UDE state has 5 compartments");
  auto cache = std::make_shared<MlpCache>();
  const auto dyn = dynamics_of(model);
  problem.rhs = [dyn, cache](double, std::span<const double> x, double e, std::span<double> dx) {
    dyn.eval(x, e, e / dyn.e_eff, dx, *cache);
  };
  return integrate_piecewise(problem, schedule, model.base.e_eff, options.step);
}

UdeObjective::UdeObjective(UdeModel prototype, TreatmentSchedule schedule, std::vector<DayValue> targets,
                           UdeLossConfig config, double step)
    : prototype_(std::move(prototype)),
      schedule_(std::move(schedule)),
      targets_(std::move(targets)),
      config_(config),
      substeps_(substeps_per_day(step)) {
  prototype_.validate();
  config_.validate();
  if (targets_.empty()) throw PreconditionError("UDE training needs at least one target observation");
  const int first_cycle = schedule_.cycle_starts().empty() ? 0 : schedule_.cycle_starts().front();
  t0_ = first_cycle - config_.warmup_days;
  int last_target = targets_.front().day;
  for (const auto& t : targets_) {
    if (t.day < t0_) throw PreconditionError("target before the start of the simulated window");
    last_target = std::max(last_target, t.day);
  }
  t1_ = std::max(last_target + 1, t0_ + 1);
  steady_end_ = std::min(schedule_.first_event_day().value_or(t1_), t1_);
  dose_.resize(static_cast<std::size_t>(t1_ - t0_ + 1));
  for (std::size_t d = 0; d < dose_.size(); ++d) dose_[d] = schedule_.relative_dose(t0_ + static_cast<int>(d));
}

std::size_t UdeObjective::dimension() const noexcept { return prototype_.net.parameter_count() + kUdeMechParameters; }

std::vector<double> UdeObjective::pack(const UdeModel& model) const {
  std::vector<double> theta(model.net.parameters().begin(), model.net.parameters().end());
  const auto& ref = config_.reference;
  const double s = config_.param_scale;
  theta.push_back(std::log(model.base.gamma / ref.gamma) / s);
  theta.push_back(std::log(model.base.mtt_hours / ref.mtt_hours) / s);
  theta.push_back(std::log(model.base.c0 / ref.c0) / s);
  theta.push_back(std::log(model.base.e_eff / ref.e_eff) / s);
  return theta;
}

UdeModel UdeObjective::unpack(std::span<const double> theta) const {
  if (theta.size() != dimension()) throw PreconditionError("UDE parameter vector has wrong size");
  UdeModel m = prototype_;
  const std::size_t n_net = m.net.parameter_count();
  std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(n_net), m.net.parameters().begin());
  const auto& ref = config_.reference;
  const double s = config_.param_scale;
  m.base.gamma = ref.gamma * std::exp(s * theta[n_net]);
  m.base.mtt_hours = ref.mtt_hours * std::exp(s * theta[n_net + 1]);
  m.base.c0 = ref.c0 * std::exp(s * theta[n_net + 2]);
  m.base.e_eff = ref.e_eff * std::exp(s * theta[n_net + 3]);
  return m;
}

double UdeObjective::loss(std::span<const double> theta) const { return evaluate(theta, {}); }

double UdeObjective::loss_and_gradient(std::span<const double> theta, std::span<double> grad) const {
  if (grad.size() != dimension()) throw PreconditionError("gradient buffer has wrong size");
  return evaluate(theta, grad);
}

double UdeObjective::evaluate(std::span<const double> theta, std::span<double> grad) const {
  const UdeModel model = unpack(theta);
  const UdeDynamics dyn = dynamics_of(model);
  constexpr std::size_t n = 5;
  const int m = substeps_;
  const double h = 1.0 / m;
  const std::size_t days = static_cast<std::size_t>(t1_ - t0_);
  const std::size_t total = days * static_cast<std::size_t>(m);

  // Forward pass, keeping every substep state for the reverse sweep.
  std::vector<double> xs((total + 1) * n);
  std::fill(xs.begin(), xs.begin() + n, model.base.c0);
  std::vector<double> k(4 * n), tmp(n);
  MlpCache cache;
  for (std::size_t d = 0; d < days; ++d) {
    const double u = dose_[d];
    const double e = model.base.e_eff * u;
    auto f = [&](double, std::span<const double> x, double ee, std::span<double> dx) { dyn.eval(x, ee, u, dx, cache); };
    for (int s = 0; s < m; ++s) {
      const std::size_t idx = d * static_cast<std::size_t>(m) + static_cast<std::size_t>(s);
      std::span<const double> x(xs.data() + idx * n, n);
      std::span<double> out(xs.data() + (idx + 1) * n, n);
      rk4_step(f, t0_ + static_cast<double>(d) + s * h, x, h, e, out, std::span<double>(k), std::span<double>(tmp));
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(out[i]))
          throw IntegrationError(t0_ + static_cast<double>(d) + (s + 1) * h, "non-finite UDE state");
      }
    }
  }

  DailySeries log_c{t0_, std::vector<double>(days + 1)};
  for (std::size_t d = 0; d <= days; ++d) {
    const double c = xs[d * static_cast<std::size_t>(m) * n + 4];
    if (!(c > 0.0)) throw DomainError("non-positive platelet prediction on day " + std::to_string(t0_ + static_cast<int>(d)));
    log_c.values[d] = std::log(c);
  }

  const bool want_grad = !grad.empty();
  std::vector<double> g_log_c(want_grad ? days + 1 : 0, 0.0);
  double loss = smse_with_gradient(targets_, log_c, SmseWeights{config_.smse_neighbor}, g_log_c);
  loss += config_.l2 * model.net.weight_norm_squared();

  double g_log_c0 = 0.0;
  if (config_.couple_steady > 0.0) {
    const double log_c0 = std::log(model.base.c0);
    const int count = steady_end_ - t0_ + 1;
    double sum = 0.0;
    for (int day = t0_; day <= steady_end_; ++day) {
      const double dev = log_c.at(day) - log_c0;
      sum += dev * dev;
      if (want_grad) {
        g_log_c[log_c.index(day)] += 2.0 * config_.couple_steady * dev / count;
        g_log_c0 -= 2.0 * config_.couple_steady * dev / count;
      }
    }
    loss += config_.couple_steady * sum / count;
  }
  if (!want_grad) return loss;

  // Reverse sweep through every RK4 stage.
  RawGrad gp;
  gp.net.assign(model.net.parameter_count(), 0.0);
  std::vector<double> lambda(n, 0.0);
  auto add_daily = [&](std::size_t d) { lambda[4] += g_log_c[d] / xs[d * static_cast<std::size_t>(m) * n + 4]; };
  add_daily(days);

  std::vector<double> y2(n), y3(n), y4(n), k1(n), k2(n), k3(n), k4(n);
  std::vector<double> gk1(n), gk2(n), gk3(n), gy(n), gx(n);
  for (std::size_t d = days; d-- > 0;) {
    const double u = dose_[d];
    const double e = model.base.e_eff * u;
    for (int s = m; s-- > 0;) {
      const std::size_t idx = d * static_cast<std::size_t>(m) + static_cast<std::size_t>(s);
      std::span<const double> x(xs.data() + idx * n, n);
      // Recompute the stages of this step.
      dyn.eval(x, e, u, k1, cache);
      for (std::size_t i = 0; i < n; ++i) y2[i] = x[i] + 0.5 * h * k1[i];
      dyn.eval(y2, e, u, k2, cache);
      for (std::size_t i = 0; i < n; ++i) y3[i] = x[i] + 0.5 * h * k2[i];
      dyn.eval(y3, e, u, k3, cache);
      for (std::size_t i = 0; i < n; ++i) y4[i] = x[i] + h * k3[i];

      std::fill(gx.begin(), gx.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        gk1[i] = h / 6.0 * lambda[i];
        gk2[i] = h / 3.0 * lambda[i];
        gk3[i] = h / 3.0 * lambda[i];
        k4[i] = h / 6.0 * lambda[i];  // cotangent of k4
      }
      std::fill(gy.begin(), gy.end(), 0.0);
      dyn.vjp(y4, e, u, k4, gy, gp, cache);
      for (std::size_t i = 0; i < n; ++i) { gk3[i] += h * gy[i]; gx[i] += gy[i]; }
      std::fill(gy.begin(), gy.end(), 0.0);
      dyn.vjp(y3, e, u, gk3, gy, gp, cache);
      for (std::size_t i = 0; i < n; ++i) { gk2[i] += 0.5 * h * gy[i]; gx[i] += gy[i]; }
      std::fill(gy.begin(), gy.end(), 0.0);
      dyn.vjp(y2, e, u, gk2, gy, gp, cache);
      for (std::size_t i = 0; i < n; ++i) { gk1[i] += 0.5 * h * gy[i]; gx[i] += gy[i]; }
      std::fill(gy.begin(), gy.end(), 0.0);
      dyn.vjp(x, e, u, gk1, gy, gp, cache);
      for (std::size_t i = 0; i < n; ++i) lambda[i] += gx[i] + gy[i];
    }
    add_daily(d);
  }
  // Initial state is (C0, ..., C0).
  for (double l : lambda) gp.c0 += l;

  const std::size_t n_net = model.net.parameter_count();
  std::copy(gp.net.begin(), gp.net.end(), grad.begin());
  for (std::size_t i = 0; i < n_net; ++i) grad[i] += 2.0 * config_.l2 * (model.net.is_weight(i) ? theta[i] : 0.0);
  const double s = config_.param_scale;
  grad[n_net] = s * model.base.gamma * gp.gamma;
  grad[n_net + 1] = -s * dyn.k * gp.k_tr;  // k_tr = 96 / mtt
  grad[n_net + 2] = s * (model.base.c0 * gp.c0 + g_log_c0);
  grad[n_net + 3] = s * model.base.e_eff * gp.e_eff;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericalError("non-finite UDE gradient", static_cast<std::ptrdiff_t>(i));
  }
  return loss;
}

namespace {

std::vector<DayValue> log_targets(const std::vector<Observation>& obs, CountScale scale) {
  auto out = to_day_values(obs);
  if (scale == CountScale::Linear) {
    for (auto& t : out) {
      if (!(t.value > 0.0)) throw PreconditionError("non-positive count");
      t.value = std::log(t.value);
    }
  }
  return out;
}

UdeObjective objective_for(const UdeModel& model, const PatientRecord& record, const UdeLossConfig& config,
                           const CycleSplit& split) {
  if (split.train_obs.empty()) throw PreconditionError("training split is empty");
  return UdeObjective(model, record.schedule, log_targets(split.train_obs, record.scale), config);
}

}  // namespace

double ude_loss(const UdeModel& model, const PatientRecord& record, const UdeLossConfig& config,
                const CycleSplit& split) {
  const auto obj = objective_for(model, record, config, split);
  return obj.loss(obj.pack(model));
}

std::vector<double> ude_gradient(const UdeModel& model, const PatientRecord& record, const UdeLossConfig& config,
                                 const CycleSplit& split) {
  const auto obj = objective_for(model, record, config, split);
  std::vector<double> grad(obj.dimension());
  obj.loss_and_gradient(obj.pack(model), grad);
  return grad;
}

}  // namespace hemadyn
