#include "hemadyn/ode.hpp"

#include <cmath>
#include <numeric>

#include "hemadyn/errors.hpp"
#include "text_util.hpp"

namespace hemadyn {

std::vector<int> Trajectory::days() const {
  std::vector<int> out(n_days());
  std::iota(out.begin(), out.end(), first_day);
  return out;
}

std::span<const double> Trajectory::state(int day) const {
  if (day < first_day || day > last_day())
    throw PreconditionError("day " + std::to_string(day) + " outside trajectory");
  return std::span<const double>(states).subspan(static_cast<std::size_t>(day - first_day) * dimension,
                                                 dimension);
}

std::vector<double> Trajectory::observable() const {
  std::vector<double> out(n_days());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = states[i * dimension + dimension - 1];
  return out;
}

DailySeries Trajectory::log_platelets() const {
  DailySeries out{first_day, observable()};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (!(out.values[i] > 0.0))
      throw DomainError("non-positive platelet count on day " + std::to_string(first_day + static_cast<int>(i)));
    out.values[i] = std::log(out.values[i]);
  }
  return out;
}

int substeps_per_day(double step) {
  if (!(step > 0.0) || step > 1.0) throw PreconditionError("step must lie in (0, 1] days");
  const double n = 1.0 / step;
  const double rounded = std::round(n);
  if (std::abs(n - rounded) > 1e-9 * rounded) throw PreconditionError("step must divide one day evenly");
  return static_cast<int>(rounded);
}

namespace {

void check_problem(const OdeProblem& p) {
  if (p.dimension == 0) throw PreconditionError("ODE dimension must be >= 1");
  if (p.initial_state.size() != p.dimension) throw PreconditionError("initial state has wrong dimension");
  if (p.t1 <= p.t0) throw PreconditionError("t1 must exceed t0");
  if (!p.rhs) throw PreconditionError("missing right-hand side");
}

}  // namespace

Trajectory integrate_daily(const OdeProblem& problem, std::span<const double> daily_effect, double step) {
  check_problem(problem);
  const int substeps = substeps_per_day(step);
  const double h = 1.0 / substeps;
  const std::size_t n = problem.dimension;
  const std::size_t days = static_cast<std::size_t>(problem.t1 - problem.t0) + 1;

  Trajectory traj;
  traj.first_day = problem.t0;
  traj.dimension = n;
  traj.states.resize(days * n);
  std::copy(problem.initial_state.begin(), problem.initial_state.end(), traj.states.begin());

  std::vector<double> x(problem.initial_state), next(n), k(4 * n), tmp(n);
  for (std::size_t d = 0; d + 1 < days; ++d) {
    const double e = d < daily_effect.size() ? daily_effect[d] : 0.0;
    const double day_start = problem.t0 + static_cast<double>(d);
    for (int s = 0; s < substeps; ++s) {
      const double t = day_start + s * h;
      rk4_step(problem.rhs, t, std::span<const double>(x), h, e, std::span<double>(next), std::span<double>(k),
               std::span<double>(tmp));
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(next[i])) throw IntegrationError(t + h, "non-finite state component " + std::to_string(i));
      }
      x.swap(next);
    }
    std::copy(x.begin(), x.end(), traj.states.begin() + static_cast<std::ptrdiff_t>((d + 1) * n));
  }
  return traj;
}

Trajectory integrate_rk4(const OdeProblem& problem, double step) {
  return integrate_daily(problem, std::span<const double>(), step);
}

std::vector<double> daily_drug_effect(const TreatmentSchedule& schedule, double e_eff, int t0, int t1) {
  std::vector<double> out(static_cast<std::size_t>(std::max(0, t1 - t0 + 1)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = e_eff * schedule.relative_dose(t0 + static_cast<int>(i));
  return out;
}

Trajectory integrate_piecewise(const OdeProblem& problem, const TreatmentSchedule& schedule, double e_eff,
                               double step) {
  const auto effect = daily_drug_effect(schedule, e_eff, problem.t0, problem.t1);
  return integrate_daily(problem, effect, step);
}

void write_trajectory_csv(const Trajectory& trajectory, const std::filesystem::path& path) {
  auto out = detail::open_output(path.string());
  out << "day";
  for (std::size_t i = 0; i < trajectory.dimension; ++i) out << ",compartment_" << i;
  out << ",platelets\n";
  for (int day = trajectory.first_day; day <= trajectory.last_day(); ++day) {
    const auto s = trajectory.state(day);
    out << day;
    for (double v : s) out << ',' << detail::format_double(v);
    out << ',' << detail::format_double(s.back()) << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace hemadyn
