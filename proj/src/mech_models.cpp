#include "hemadyn/mech_models.hpp"

#include <cmath>

#include "hemadyn/errors.hpp"

namespace hemadyn {

std::string_view to_string(MechModel model) {
  switch (model) {
    case MechModel::Friberg: return "friberg";
    case MechModel::Henrich: return "henrich";
    case MechModel::MS: return "ms";
    case MechModel::MSRev: return "ms-rev";
  }
  return "?";
}

MechModel mech_model_from_string(std::string_view name) {
  for (MechModel m : {MechModel::Friberg, MechModel::Henrich, MechModel::MS, MechModel::MSRev}) {
    if (to_string(m) == name) return m;
  }
  throw PreconditionError("unknown mechanistic model '" + std::string(name) + "'");
}

MechParams MechParams::population(MechModel model) {
  MechParams p;
  p.model = model;
  if (model == MechModel::MSRev) p.core.e_eff = 120.0;
  return p;
}

void MechParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw PreconditionError(std::string(name) + " must be positive and finite");
  };
  positive(core.gamma, "gamma");
  positive(core.mtt_hours, "mtt_hours");
  positive(core.c0, "c0");
  positive(core.e_eff, "e_eff");
  switch (model) {
    case MechModel::Friberg: break;
    case MechModel::Henrich:
      if (!(f_tr > 0.0 && f_tr <= 1.0)) throw PreconditionError("f_tr must lie in (0, 1]");
      break;
    case MechModel::MSRev:
      positive(k_cyc2, "k_cyc2");
      [[fallthrough]];
    case MechModel::MS:
      if (!(f_p > 0.0 && f_p <= 1.0)) throw PreconditionError("f_p must lie in (0, 1]");
      if (!(k_cyc >= 0.0) || !std::isfinite(k_cyc)) throw PreconditionError("k_cyc must be non-negative");
      break;
  }
}

std::size_t state_dimension(MechModel model) {
  switch (model) {
    case MechModel::Friberg: return 5;
    case MechModel::Henrich: return 6;
    case MechModel::MS:
    case MechModel::MSRev: return 7;
  }
  return 0;
}

std::vector<std::string> compartment_names(MechModel model) {
  switch (model) {
    case MechModel::Friberg: return {"P", "T1", "T2", "T3", "C"};
    case MechModel::Henrich: return {"S", "P", "T1", "T2", "T3", "C"};
    case MechModel::MS:
    case MechModel::MSRev: return {"P", "Q1", "Q2", "T1", "T2", "T3", "C"};
  }
  return {};
}

double drug_effect(double t, const TreatmentSchedule& schedule, double e_eff) {
  return e_eff * schedule.relative_dose(static_cast<int>(std::floor(t)));
}

namespace {

double feedback(const FribergParams& p, double c) {
  if (!(c > 0.0)) throw DomainError("feedback term undefined for C <= 0 (C=" + std::to_string(c) + ")");
  return std::pow(p.c0 / c, p.gamma);
}

// Maturation chain T1 -> T2 -> T3 -> C fed by `influx`.
void transit_chain(double k_tr, double influx, std::span<const double> t_and_c, std::span<double> out) {
  out[0] = influx - k_tr * t_and_c[0];
  out[1] = k_tr * (t_and_c[0] - t_and_c[1]);
  out[2] = k_tr * (t_and_c[1] - t_and_c[2]);
  out[3] = k_tr * (t_and_c[2] - t_and_c[3]);
}

}  // namespace

void friberg_rhs(const FribergParams& p, std::span<const double> x, double e, std::span<double> dx) {
  const double k_tr = p.k_tr();
  const double fb = feedback(p, x[4]);
  dx[0] = k_tr * x[0] * (1.0 - e) * fb - k_tr * x[0];
  transit_chain(k_tr, k_tr * x[0], x.subspan(1, 4), dx.subspan(1, 4));
}

void henrich_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx) {
  const double k_tr = p.core.k_tr();
  const double k_p = p.f_tr * k_tr;
  const double k_s = (1.0 - p.f_tr) * k_tr;
  const double fb = feedback(p.core, x[5]);
  const double s = x[0], prol = x[1];
  dx[0] = k_s * (1.0 - e) * fb * s - k_s * s;
  dx[1] = k_p * prol * (1.0 - e) * fb - k_tr * prol + k_s * s;
  transit_chain(k_tr, k_tr * prol, x.subspan(2, 4), dx.subspan(2, 4));
}

void ms_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx) {
  const double k_tr = p.core.k_tr();
  const double k_p = p.f_p * k_tr;
  const double fb = feedback(p.core, x[6]);
  const double prol = x[0], q1 = x[1], q2 = x[2];
  dx[0] = k_p * prol * (1.0 - e) * fb - k_tr * p.f_p * prol + p.k_cyc * (q2 - (1.0 - p.f_p) * prol);
  dx[1] = p.k_cyc * ((1.0 - p.f_p) * prol - q1);
  dx[2] = p.k_cyc * (q1 - q2);
  transit_chain(k_tr, k_tr * p.f_p * prol, x.subspan(3, 4), dx.subspan(3, 4));
}

void msrev_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx) {
  const double k_tr = p.core.k_tr();
  const double k_p = p.f_p * k_tr;
  const double fb = feedback(p.core, x[6]);
  const double prol = x[0], q1 = x[1], q2 = x[2];
  dx[0] = k_p * prol * (1.0 - e) * fb - k_tr * p.f_p * prol + p.k_cyc2 * q2 - p.k_cyc * (1.0 - p.f_p) * prol;
  dx[1] = p.k_cyc * ((1.0 - p.f_p) * prol - q1);
  dx[2] = p.k_cyc * q1 - p.k_cyc2 * q2;
  transit_chain(k_tr, k_tr * p.f_p * prol, x.subspan(3, 4), dx.subspan(3, 4));
}

void mech_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx) {
  switch (p.model) {
    case MechModel::Friberg: friberg_rhs(p.core, x, e, dx); return;
    case MechModel::Henrich: henrich_rhs(p, x, e, dx); return;
    case MechModel::MS: ms_rhs(p, x, e, dx); return;
    case MechModel::MSRev: msrev_rhs(p, x, e, dx); return;
  }
}

std::vector<double> steady_state(const MechParams& p, std::optional<double> c0_override) {
  const double c0 = c0_override.value_or(p.core.c0);
  switch (p.model) {
    case MechModel::Friberg: return std::vector<double>(5, c0);
    case MechModel::Henrich: return std::vector<double>(6, c0);
    case MechModel::MS:
    case MechModel::MSRev: {
      const double p0 = c0 / p.f_p;
      const double q1 = (1.0 - p.f_p) * p0;
      const double q2 = p.model == MechModel::MS ? q1 : p.k_cyc / p.k_cyc2 * q1;
      return {p0, q1, q2, c0, c0, c0, c0};
    }
  }
  return {};
}

OdeProblem make_problem(const MechParams& p, int t0, int t1, std::vector<double> initial_state) {
  OdeProblem problem;
  problem.dimension = state_dimension(p.model);
  problem.t0 = t0;
  problem.t1 = t1;
  problem.initial_state = std::move(initial_state);
  problem.rhs = [p](double, std::span<const double> x, double e, std::span<double> dx) { mech_rhs(p, x, e, dx); };
  return problem;
}

Trajectory simulate(const MechParams& p, const TreatmentSchedule& schedule, int horizon_days,
                    const SimulationOptions& options) {
  p.validate();
  if (auto last = schedule.last_event_day(); last && horizon_days < *last)
    throw PreconditionError("horizon " + std::to_string(horizon_days) + " ends before the last treatment day " +
                            std::to_string(*last));
  auto init = options.initial_state.value_or(steady_state(p));
  if (init.size() != state_dimension(p.model)) throw PreconditionError("initial state has wrong dimension");
  const auto problem = make_problem(p, options.start_day, horizon_days, std::move(init));
  return integrate_piecewise(problem, schedule, p.core.e_eff, options.step);
}

}  // namespace hemadyn
