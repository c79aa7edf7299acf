#include "hemadyn/pipelines.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "hemadyn/errors.hpp"

namespace hemadyn {

std::string_view to_string(ModelId id) {
  switch (id) {
    case ModelId::Friberg: return "friberg";
    case ModelId::Henrich: return "henrich";
    case ModelId::MS: return "ms";
    case ModelId::MSRev: return "ms-rev";
    case ModelId::UdeAdd: return "ude-add";
    case ModelId::UdeRep: return "ude-rep";
    case ModelId::ArxGru: return "arx-gru";
  }
  return "?";
}

const std::vector<ModelId>& all_model_ids() {
  static const std::vector<ModelId> ids{ModelId::Friberg, ModelId::Henrich, ModelId::MS,    ModelId::MSRev,
                                        ModelId::UdeAdd,  ModelId::UdeRep,  ModelId::ArxGru};
  return ids;
}

ModelId model_id_from_string(std::string_view name) {
  for (ModelId id : all_model_ids())
    if (to_string(id) == name) return id;
  throw PreconditionError("unknown model id '" + std::string(name) +
                          "' (expected friberg, henrich, ms, ms-rev, ude-add, ude-rep or arx-gru)");
}

bool is_mechanistic(ModelId id) {
  return id == ModelId::Friberg || id == ModelId::Henrich || id == ModelId::MS || id == ModelId::MSRev;
}

MechModel mech_model_of(ModelId id) {
  switch (id) {
    case ModelId::Friberg: return MechModel::Friberg;
    case ModelId::Henrich: return MechModel::Henrich;
    case ModelId::MS: return MechModel::MS;
    case ModelId::MSRev: return MechModel::MSRev;
    default: throw PreconditionError("model '" + std::string(to_string(id)) + "' is not mechanistic");
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t patient_seed(std::uint64_t master, std::string_view patient_id) {
  return splitmix64(master ^ fnv1a64(patient_id));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) { return splitmix64(base ^ splitmix64(salt)); }

std::string_view to_string(InitialCondition ic) {
  return ic == InitialCondition::FittedC0 ? "fitted-c0" : "first-observation";
}

InitialCondition initial_condition_from_string(std::string_view name) {
  if (name == "fitted-c0") return InitialCondition::FittedC0;
  if (name == "first-observation") return InitialCondition::FirstObservation;
  throw PreconditionError("unknown initial condition '" + std::string(name) + "'");
}

int default_jobs() {
  const auto n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

namespace {

constexpr double kInfeasibleLoss = 1e10;

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

double first_count(const PatientRecord& record) {
  const double v = record.observations.front().platelet_count;
  return record.scale == CountScale::Linear ? v : std::exp(v);
}

TreatmentSchedule truncate(const TreatmentSchedule& s, int last_day) {
  std::vector<DoseEvent> ev;
  for (const auto& e : s.events())
    if (e.day <= last_day) ev.push_back(e);
  return TreatmentSchedule(std::move(ev), s.cycle_starts(), s.cycle_length());
}

int first_cycle_day(const TreatmentSchedule& s) {
  if (!s.cycle_starts().empty()) return s.cycle_starts().front();
  return s.first_event_day().value_or(0);
}

DailySeries mech_log_prediction(const MechFit& fit, const TreatmentSchedule& schedule, int start_day, int end_day) {
  const int s0 = std::min(start_day, first_cycle_day(schedule));
  SimulationOptions opt;
  opt.start_day = s0;
  opt.initial_state = steady_state(fit.params, fit.initial_level);
  const auto tr = simulate(fit.params, truncate(schedule, end_day), std::max(end_day, s0 + 1), opt);
  DailySeries out{start_day, {}};
  for (int d = start_day; d <= end_day; ++d) {
    const double c = tr.platelets(d);
    if (!(c > 0.0)) throw DomainError("non-positive platelet prediction on day " + std::to_string(d));
    out.values.push_back(std::log(c));
  }
  return out;
}

DailySeries ude_log_prediction(const UdeFit& fit, const TreatmentSchedule& schedule, int start_day, int end_day) {
  const int t0 = first_cycle_day(schedule) - fit.warmup_days;
  SimulationOptions opt;
  opt.start_day = t0;
  const auto tr = simulate_ude(fit.model, truncate(schedule, end_day), std::max(end_day, t0 + 1), opt);
  DailySeries out{start_day, {}};
  for (int d = start_day; d <= end_day; ++d) {
    // before the simulated window the patient rests at its steady state
    const double c = d < t0 ? fit.model.base.c0 : tr.platelets(d);
    if (!(c > 0.0)) throw DomainError("non-positive platelet prediction on day " + std::to_string(d));
    out.values.push_back(std::log(c));
  }
  return out;
}

}  // namespace

DailySeries predict_daily(const FitResult& fit, const TreatmentSchedule& schedule, int start_day, int end_day) {
  if (end_day < start_day) throw PreconditionError("prediction end precedes start");
  if (const auto* m = std::get_if<MechFit>(&fit.parameters)) return mech_log_prediction(*m, schedule, start_day, end_day);
  if (const auto* u = std::get_if<UdeFit>(&fit.parameters)) return ude_log_prediction(*u, schedule, start_day, end_day);
  const auto& a = std::get<ArxFit>(fit.parameters);
  ArxSeries series{schedule, a.baseline, {}};
  return rollout(a.net, series, start_day, end_day, false, a.config);
}

// ---- mechanistic fits ----------------------------------------------------

std::vector<std::string> fitted_parameter_names(MechModel model) {
  std::vector<std::string> names{"gamma", "mtt_hours", "c0", "e_eff"};
  if (model == MechModel::MS || model == MechModel::MSRev) names.push_back("k_cyc");
  return names;
}

namespace {

std::vector<double> fitted_values(const MechParams& p) {
  std::vector<double> v{p.core.gamma, p.core.mtt_hours, p.core.c0, p.core.e_eff};
  if (p.model == MechModel::MS || p.model == MechModel::MSRev) v.push_back(p.k_cyc);
  return v;
}

MechParams with_values(MechParams p, std::span<const double> v) {
  p.core.gamma = v[0];
  p.core.mtt_hours = v[1];
  p.core.c0 = v[2];
  p.core.e_eff = v[3];
  if (v.size() > 4) {
    const double ratio = p.k_cyc2 / p.k_cyc;
    p.k_cyc = v[4];
    p.k_cyc2 = ratio * v[4];
  }
  return p;
}

}  // namespace

FitResult fit_mechanistic(ModelId model, const PatientRecord& record, const CycleSplit& split,
                          const MechFitConfig& config) {
  if (split.train_obs.empty()) throw PreconditionError("training split is empty");
  const MechModel mm = mech_model_of(model);
  const auto population = MechParams::population(mm);
  const auto targets = log_targets(split.train_obs, record.scale);
  int first = first_cycle_day(record.schedule), last = first;
  for (const auto& t : targets) {
    first = std::min(first, t.day);
    last = std::max(last, t.day);
  }
  last += 1;  // keep the t+1 neighbor of the last observation
  const auto schedule = truncate(record.schedule, last);
  const PenaltyConfig penalty{config.sigma, fitted_values(population)};
  std::optional<double> initial_level;
  if (config.initial == InitialCondition::FirstObservation) initial_level = first_count(record);

  auto objective = [&](std::span<const double> logp) -> double {
    std::vector<double> p(logp.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logp[i]);
    try {
      const MechFit fit{with_values(population, p), initial_level};
      fit.params.validate();
      const auto pred = mech_log_prediction(fit, schedule, first, last);
      const double data = config.use_smse ? smse(targets, pred) : mse(targets, pred);
      const double value = data + parameter_penalty(p, penalty);
      return std::isfinite(value) ? value : kInfeasibleLoss;
    } catch (const DomainError&) {
      return kInfeasibleLoss;
    } catch (const IntegrationError&) {
      return kInfeasibleLoss;
    } catch (const PreconditionError&) {
      return kInfeasibleLoss;
    }
  };

  std::vector<double> x0;
  for (double v : penalty.population) x0.push_back(std::log(v));
  NelderMeadResult best = nelder_mead(objective, x0, config.optimizer);
  int iterations = best.iterations;
  for (int round = 1; round < config.max_rounds; ++round) {
    auto again = nelder_mead(objective, best.x, config.optimizer);
    iterations += again.iterations;
    const bool improved = again.value < best.value - 1e-12 * std::max(1.0, std::abs(best.value));
    if (again.value <= best.value) best = std::move(again);
    if (!improved) break;
  }

  std::vector<double> p(best.x.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(best.x[i]);
  FitResult r;
  r.model = model;
  r.patient_id = record.id;
  r.n_train = split.n_train_cycles;
  r.parameters = MechFit{with_values(population, p), initial_level};
  r.train_loss = best.value;
  r.iterations = iterations;
  r.converged = best.converged && best.value < kInfeasibleLoss;
  r.termination = best.termination;
  return r;
}

// ---- Adam driver ---------------------------------------------------------

namespace {

using LossGrad = std::function<double(std::span<const double>, std::span<double>)>;

/// Adam over the first `n_trainable` entries; keeps the best iterate. A
/// non-finite loss or a numerical failure restarts once with half the
/// learning rate.
AdamRun run_adam(const LossGrad& fg, const std::vector<double>& theta0, std::size_t n_trainable, LrSchedule schedule,
                 int epochs) {
  schedule.validate();
  for (int attempt = 0;; ++attempt) {
    try {
      std::vector<double> theta = theta0, grad(theta0.size());
      AdamState state(theta.size());
      AdamRun run;
      run.retries = attempt;
      run.best = theta;
      run.best_loss = INFINITY;
      for (int epoch = 0; epoch <= epochs; ++epoch) {
        const double loss = fg(theta, grad);
        if (!std::isfinite(loss)) throw NumericalError("training loss diverged at epoch " + std::to_string(epoch));
        if (loss < run.best_loss) {
          run.best_loss = loss;
          run.best = theta;
        }
        if (epoch == epochs) break;
        std::fill(grad.begin() + static_cast<std::ptrdiff_t>(n_trainable), grad.end(), 0.0);
        adam_step(state, theta, grad, schedule, epoch);
        run.epochs = epoch + 1;
      }
      return run;
    } catch (const NumericalError&) {
      if (attempt >= 1) throw;
    } catch (const IntegrationError&) {
      if (attempt >= 1) throw;
    } catch (const DomainError&) {
      if (attempt >= 1) throw;
    }
    schedule.lr_start *= 0.5;
  }
}

const MechFit& require_friberg(const FitResult& fit) {
  if (fit.model != ModelId::Friberg || !std::holds_alternative<MechFit>(fit.parameters))
    throw PreconditionError("a Friberg fit is required before hybrid or data-driven training");
  if (!fit.converged) throw PreconditionError("the Friberg fit for '" + fit.patient_id + "' did not converge");
  return std::get<MechFit>(fit.parameters);
}

FitResult ude_stage_b(const PatientRecord& record, const CycleSplit& split, UdeModel model,
                      const UdeTrainConfig& config, ModelId id, int retries_before) {
  if (split.train_obs.empty()) throw PreconditionError("training split is empty");
  UdeObjective obj(model, record.schedule, log_targets(split.train_obs, record.scale), config.loss);
  LossGrad fg = [&](std::span<const double> th, std::span<double> g) { return obj.loss_and_gradient(th, g); };
  const auto run = run_adam(fg, obj.pack(model), obj.dimension(), config.schedule, config.epochs);
  FitResult r;
  r.model = id;
  r.patient_id = record.id;
  r.n_train = split.n_train_cycles;
  r.parameters = UdeFit{obj.unpack(run.best), config.loss.warmup_days};
  r.train_loss = run.best_loss;
  r.iterations = run.epochs;
  r.converged = true;
  r.termination = run.retries + retries_before > 0 ? "epoch limit (after learning-rate halving)" : "epoch limit";
  return r;
}

MlpNet zero_output_layer(MlpNet net) {
  const auto& sizes = net.spec().layer_sizes;
  const auto n_in = static_cast<std::size_t>(sizes[sizes.size() - 2]);
  auto p = net.parameters();
  std::fill(p.end() - static_cast<std::ptrdiff_t>(n_in + 1), p.end(), 0.0);
  return net;
}

}  // namespace

FitResult train_ude_add(const PatientRecord& record, const CycleSplit& split, const FitResult& friberg_fit,
                        const UdeTrainConfig& config, std::uint64_t seed) {
  const auto& fr = require_friberg(friberg_fit);
  UdeModel model;
  model.variant = UdeVariant::Add;
  model.base = fr.params.core;
  model.a = config.a;
  // zero readout: training starts exactly at the Friberg fit
  model.net = zero_output_layer(init_weights(config.spec, seed));
  return ude_stage_b(record, split, std::move(model), config, ModelId::UdeAdd, 0);
}

UdeFit pretrain_ude_rep(const PatientRecord& record, const FitResult& friberg_fit, const UdeTrainConfig& config,
                        std::uint64_t seed) {
  const auto& fr = require_friberg(friberg_fit);
  const auto& base = fr.params.core;
  UdeModel model;
  model.variant = UdeVariant::Rep;
  model.base = base;
  model.a = config.a;
  model.net = init_weights(config.spec, seed);

  const auto& schedule = record.schedule;
  const int t0 = first_cycle_day(schedule) - config.loss.warmup_days;
  const int t1 = std::max(schedule.calendar_end(), schedule.last_event_day().value_or(t0) + 1);
  SimulationOptions opt;
  opt.start_day = t0;
  opt.step = 0.25;
  const auto tr = simulate(fr.params, schedule, t1, opt);

  // A1: regress the network onto the proliferation flux the Friberg model
  // implies along its own trajectory, NN = (P/C0)(C0/C)^gamma / tanh(aP).
  std::vector<std::array<double, 3>> inputs;
  std::vector<double> targets;
  for (int d = t0; d <= t1; ++d) {
    const auto x = tr.state(d);
    const double P = x[0], C = x[4];
    const double tau = std::tanh(model.a * P / kTanhCellUnit);
    if (!(tau > 0.0) || !(C > 0.0)) continue;
    inputs.push_back({P / base.c0, C / base.c0, schedule.relative_dose(d)});
    targets.push_back(P / base.c0 * std::pow(base.c0 / C, base.gamma) / tau);
  }
  if (targets.empty()) throw NumericalError("Friberg trajectory offers no regression samples");
  MlpNet net = model.net;
  LossGrad regression = [&](std::span<const double> th, std::span<double> g) {
    std::copy(th.begin(), th.end(), net.parameters().begin());
    std::fill(g.begin(), g.end(), 0.0);
    double loss = 0.0;
    MlpCache cache;
    const double inv = 1.0 / static_cast<double>(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double r = net.forward(inputs[i], cache) - targets[i];
      loss += r * r * inv;
      net.backward(cache, 2.0 * r * inv, g, {});
    }
    return loss;
  };
  LrSchedule reg_schedule = config.schedule;
  reg_schedule.lr_start = config.pretrain_lr;
  std::vector<double> theta(model.net.parameters().begin(), model.net.parameters().end());
  auto run = run_adam(regression, theta, theta.size(), reg_schedule, config.pretrain_regression_epochs);
  std::copy(run.best.begin(), run.best.end(), model.net.parameters().begin());

  // A2: match the daily Friberg trajectory through the integrator.
  if (config.pretrain_trajectory_epochs > 0) {
    std::vector<DayValue> daily;
    for (int d = t0; d <= t1 - 1; ++d) daily.push_back({d, std::log(tr.platelets(d))});
    UdeLossConfig lc = config.loss;
    lc.l2 = 0.0;
    lc.couple_steady = 0.0;
    UdeObjective obj(model, schedule, daily, lc);
    LossGrad fg = [&](std::span<const double> th, std::span<double> g) { return obj.loss_and_gradient(th, g); };
    LrSchedule traj_schedule = config.schedule;
    traj_schedule.lr_start = config.pretrain_lr * 0.1;
    const auto tr_run = run_adam(fg, obj.pack(model), model.net.parameter_count(), traj_schedule,
                                 config.pretrain_trajectory_epochs);
    model = obj.unpack(tr_run.best);
  }
  return UdeFit{model, config.loss.warmup_days};
}

FitResult train_ude_rep(const PatientRecord& record, const CycleSplit& split, const FitResult& friberg_fit,
                        const UdeTrainConfig& config, std::uint64_t seed) {
  const auto& fr = require_friberg(friberg_fit);
  UdeModel model;
  if (config.skip_pretraining) {
    model.variant = UdeVariant::Rep;
    model.base = fr.params.core;
    model.a = config.a;
    model.net = init_weights(config.spec, seed);
  } else {
    model = pretrain_ude_rep(record, friberg_fit, config, seed).model;
  }
  return ude_stage_b(record, split, std::move(model), config, ModelId::UdeRep, 0);
}

// ---- ARX-GRU -------------------------------------------------------------

std::vector<ArxTrainingSeries> virtual_scenarios(const PatientRecord& record, const FitResult& friberg_fit,
                                                 const ArxTrainConfig& config, std::uint64_t seed) {
  const auto& fr = require_friberg(friberg_fit);
  const auto& sc = config.scenarios;
  if (sc.count < 1) throw PreconditionError("scenario count must be >= 1");
  if (sc.dose_jitter < 0.0 || sc.dose_jitter >= 1.0) throw PreconditionError("dose jitter must lie in [0, 1)");
  if (sc.start_jitter < 0) throw PreconditionError("start jitter must be >= 0");
  const MechParams params = sc.population_mode ? MechParams::population(MechModel::Friberg) : fr.params;
  const auto& sched = record.schedule;
  if (sched.cycle_starts().empty()) throw PreconditionError("schedule has no cycles");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dose(1.0 - sc.dose_jitter, 1.0 + sc.dose_jitter);
  std::uniform_int_distribution<int> shift(-sc.start_jitter, sc.start_jitter);
  std::vector<ArxTrainingSeries> out;
  out.reserve(static_cast<std::size_t>(sc.count));
  for (int k = 0; k < sc.count; ++k) {
    std::vector<int> shifts(sched.cycle_starts().size(), 0);
    for (std::size_t c = 1; c < shifts.size(); ++c) shifts[c] = shift(rng);
    std::vector<int> starts;
    for (std::size_t c = 0; c < shifts.size(); ++c) starts.push_back(sched.cycle_starts()[c] + shifts[c]);
    std::vector<DoseEvent> events;
    for (const auto& ev : sched.events()) {
      const int c = std::max(0, sched.cycle_index(ev.day));
      events.push_back({ev.day + shifts[static_cast<std::size_t>(c)], ev.relative_dose * dose(rng)});
    }
    TreatmentSchedule s(std::move(events), std::move(starts), sched.cycle_length());
    const int first = s.first_event_day().value_or(s.cycle_starts().front());
    const int r0 = first - config.arx.warmup_days;
    const int horizon = std::max(s.calendar_end(), s.last_event_day().value_or(r0) + 1);
    SimulationOptions opt;
    opt.start_day = r0;
    const auto tr = simulate(params, s, horizon, opt);
    ArxTrainingSeries ts;
    ts.series.schedule = std::move(s);
    ts.series.baseline = std::log(params.core.c0);
    for (int d = r0; d <= horizon; ++d) ts.series.observed.push_back({d, std::log(tr.platelets(d))});
    ts.targets = ts.series.observed;
    ts.teacher_forcing = true;
    out.push_back(std::move(ts));
  }
  return out;
}

GruNet pretrain_arx(const PatientRecord& record, const FitResult& friberg_fit, const ArxTrainConfig& config,
                    std::uint64_t seed) {
  config.arx.validate();
  auto scenarios = virtual_scenarios(record, friberg_fit, config, derive_seed(seed, 1));
  ArxConfig pc = config.arx;
  pc.baseline_penalty = 0.0;
  ArxObjective obj(pc.hidden, std::move(scenarios), pc);
  const auto init = init_gru(pc.hidden, derive_seed(seed, 2));
  std::vector<double> theta(init.parameters().begin(), init.parameters().end());
  LossGrad fg = [&](std::span<const double> th, std::span<double> g) { return obj.loss_and_gradient(th, g); };
  LrSchedule s = config.arx.schedule;
  s.lr_start = config.pretrain_lr;
  const auto run = run_adam(fg, theta, theta.size(), s, config.pretrain_epochs);
  return GruNet(pc.hidden, run.best);
}

FitResult train_arx_gru(const PatientRecord& record, const CycleSplit& split, const FitResult& friberg_fit,
                        const ArxTrainConfig& config, std::uint64_t seed) {
  require_friberg(friberg_fit);
  if (split.train_obs.empty()) throw PreconditionError("training split is empty");
  const GruNet pre = pretrain_arx(record, friberg_fit, config, seed);

  ArxTrainingSeries ts;
  ts.series = make_series(record, split.train_obs);
  ts.targets = log_targets(split.train_obs, record.scale);
  ts.teacher_forcing = false;
  const double baseline = ts.series.baseline;
  ArxObjective obj(config.arx.hidden, {std::move(ts)}, config.arx);
  LossGrad fg = [&](std::span<const double> th, std::span<double> g) { return obj.loss_and_gradient(th, g); };
  LrSchedule s = config.arx.schedule;
  s.lr_start = config.finetune_lr;
  std::vector<double> theta(pre.parameters().begin(), pre.parameters().end());
  const auto run = run_adam(fg, theta, theta.size(), s, config.finetune_epochs);

  FitResult r;
  r.model = ModelId::ArxGru;
  r.patient_id = record.id;
  r.n_train = split.n_train_cycles;
  r.parameters = ArxFit{GruNet(config.arx.hidden, run.best), config.arx, baseline};
  r.train_loss = run.best_loss;
  r.iterations = run.epochs;
  r.converged = true;
  r.termination = run.retries > 0 ? "epoch limit (after learning-rate halving)" : "epoch limit";
  return r;
}

// ---- dispatch ------------------------------------------------------------

std::uint64_t fit_seed(std::uint64_t master, std::string_view patient_id, ModelId model, int n_train) {
  return derive_seed(patient_seed(master, patient_id), static_cast<std::uint64_t>(model) * 16 + static_cast<std::uint64_t>(n_train));
}

FitResult fit_model(ModelId model, const PatientRecord& record, const CycleSplit& split, const ModelConfigs& configs,
                    std::uint64_t seed, const FitResult* friberg) {
  if (is_mechanistic(model)) return fit_mechanistic(model, record, split, configs.mech);
  if (!friberg) throw PreconditionError(std::string(to_string(model)) + " needs the Friberg fit of the same split");
  switch (model) {
    case ModelId::UdeAdd: return train_ude_add(record, split, *friberg, configs.ude, seed);
    case ModelId::UdeRep: return train_ude_rep(record, split, *friberg, configs.ude, seed);
    default: return train_arx_gru(record, split, *friberg, configs.arx, seed);
  }
}

// ---- virtual cohorts -----------------------------------------------------

void VirtualCohortSpec::validate() const {
  if (n_patients < 0) throw PreconditionError("n_patients must be >= 0");
  for (double cv : {cv_gamma, cv_mtt, cv_c0, cv_e_eff})
    if (!(cv >= 0.0)) throw PreconditionError("coefficients of variation must be >= 0");
  if (cycle_lengths.empty()) throw PreconditionError("at least one cycle length is required");
  for (int len : cycle_lengths)
    if (len != 14 && len != 21) throw PreconditionError("cycle lengths must be 14 or 21");
  if (min_cycles < kMinObservedCycles || max_cycles < min_cycles)
    throw PreconditionError("cycle count range must satisfy 4 <= min <= max");
  if (treatment_days < 1 || treatment_days > 7) throw PreconditionError("treatment_days must lie in [1, 7]");
  if (!(dose_jitter >= 0.0 && dose_jitter < 1.0)) throw PreconditionError("dose_jitter must lie in [0, 1)");
  if (!(dense_fraction >= 0.0 && dense_fraction <= 1.0)) throw PreconditionError("dense_fraction must lie in [0, 1]");
  if (sparse_obs < 2 || dense_min_obs < 2 || dense_max_obs < dense_min_obs || dense_max_obs > 14)
    throw PreconditionError("observation counts per cycle must lie in [2, 14] with min <= max");
  if (!(noise_sd >= 0.0)) throw PreconditionError("noise_sd must be >= 0");
  if (!(cumulative_toxicity >= 0.0)) throw PreconditionError("cumulative_toxicity must be >= 0");
  if (!(deformed_fraction >= 0.0 && deformed_fraction <= 1.0))
    throw PreconditionError("deformed_fraction must lie in [0, 1]");
  population.validate();
}

namespace {

double lognormal_factor(std::mt19937_64& rng, double cv) {
  if (cv == 0.0) return 1.0;
  const double s = std::sqrt(std::log1p(cv * cv));
  std::normal_distribution<double> n(0.0, 1.0);
  return std::exp(s * n(rng) - 0.5 * s * s);
}

std::string padded_id(const std::string& prefix, int i, int n) {
  const int width = std::max(3, static_cast<int>(std::to_string(std::max(n - 1, 0)).size()));
  std::string digits = std::to_string(i);
  return prefix + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0') +
         digits;
}

}  // namespace

std::vector<VirtualPatient> generate_virtual_cohort(const VirtualCohortSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<VirtualPatient> out;
  out.reserve(static_cast<std::size_t>(spec.n_patients));
  for (int i = 0; i < spec.n_patients; ++i) {
    VirtualPatient vp;
    MechParams truth = spec.population;
    truth.model = spec.model;
    truth.core.gamma *= lognormal_factor(rng, spec.cv_gamma);
    truth.core.mtt_hours *= lognormal_factor(rng, spec.cv_mtt);
    truth.core.c0 *= lognormal_factor(rng, spec.cv_c0);
    truth.core.e_eff *= lognormal_factor(rng, spec.cv_e_eff);

    const int len = spec.cycle_lengths[std::uniform_int_distribution<std::size_t>(0, spec.cycle_lengths.size() - 1)(rng)];
    const int n_cycles = std::uniform_int_distribution<int>(spec.min_cycles, spec.max_cycles)(rng);
    const bool dense = std::bernoulli_distribution(spec.dense_fraction)(rng);
    const bool deformed = std::bernoulli_distribution(spec.deformed_fraction)(rng);
    vp.toxicity_growth = deformed ? spec.cumulative_toxicity : 0.0;

    std::uniform_real_distribution<double> jitter(1.0 - spec.dose_jitter, 1.0 + spec.dose_jitter);
    std::vector<DoseEvent> events, sim_events;
    std::vector<int> starts;
    for (int c = 0; c < n_cycles; ++c) {
      starts.push_back(c * len);
      for (int d = 0; d < spec.treatment_days; ++d) {
        const double dose = spec.dose_jitter > 0.0 ? jitter(rng) : 1.0;
        events.push_back({c * len + d, dose});
        sim_events.push_back({c * len + d, dose * (1.0 + vp.toxicity_growth * c)});
      }
    }
    TreatmentSchedule schedule(std::move(events), starts, len);
    const TreatmentSchedule sim_schedule(std::move(sim_events), starts, len);
    const int horizon = schedule.calendar_end();
    const auto tr = simulate(truth, sim_schedule, horizon);

    std::normal_distribution<double> noise(0.0, 1.0);
    PatientRecord rec;
    rec.id = padded_id(spec.id_prefix, i, spec.n_patients);
    for (int c = 0; c < n_cycles; ++c) {
      const int m = dense ? std::uniform_int_distribution<int>(spec.dense_min_obs, spec.dense_max_obs)(rng)
                          : spec.sparse_obs;
      std::vector<int> days(static_cast<std::size_t>(len));
      std::iota(days.begin(), days.end(), c * len);
      std::vector<int> chosen;
      if (c == 0 && spec.baseline_observation) {
        chosen.push_back(0);
        days.erase(days.begin());
      }
      std::shuffle(days.begin(), days.end(), rng);
      for (int k = 0; static_cast<int>(chosen.size()) < m; ++k) chosen.push_back(days[static_cast<std::size_t>(k)]);
      std::sort(chosen.begin(), chosen.end());
      for (int d : chosen) {
        const double eps = spec.noise_sd > 0.0 ? spec.noise_sd * noise(rng) : 0.0;
        rec.observations.push_back({static_cast<double>(d), tr.platelets(d) * std::exp(eps)});
      }
    }
    rec.schedule = std::move(schedule);
    rec.group = classify_group(rec);
    if (auto err = validate_record(rec); !err.empty())
      throw Error("virtual patient " + rec.id + " violates record invariants: " + err);
    vp.record = std::move(rec);
    vp.truth = truth;
    out.push_back(std::move(vp));
  }
  return out;
}

}  // namespace hemadyn
