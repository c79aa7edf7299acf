#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "hemadyn/core_data.hpp"
#include "hemadyn/series.hpp"

namespace hemadyn {

/// dx/dt = rhs(t, x, e) where `e` is the exogenous drug effect, constant
/// within each day.
using RhsFn = std::function<void(double t, std::span<const double> x, double drug_effect,
                                 std::span<double> dxdt)>;

inline constexpr double kDefaultStep = 1.0 / 24.0;

struct OdeProblem {
  std::size_t dimension = 0;
  RhsFn rhs;
  std::vector<double> initial_state;
  int t0 = 0;
  int t1 = 0;
};

/// Day-sampled solution. The observable (platelets) is the last compartment.
struct Trajectory {
  int first_day = 0;
  std::size_t dimension = 0;
  std::vector<double> states;  ///< row-major, one row of `dimension` values per day

  std::size_t n_days() const noexcept { return dimension == 0 ? 0 : states.size() / dimension; }
  int last_day() const noexcept { return first_day + static_cast<int>(n_days()) - 1; }
  std::vector<int> days() const;
  std::span<const double> state(int day) const;
  double platelets(int day) const { return state(day).back(); }
  std::vector<double> observable() const;
  /// ln(platelets) per day. Throws DomainError if any platelet value is <= 0.
  DailySeries log_platelets() const;
};

/// Number of RK4 substeps per day; `step` must divide one day evenly.
int substeps_per_day(double step);

/// One classical RK4 step of size h from x (drug effect held at e).
/// `k` must provide 4 * dim scratch values, `tmp` dim values.
template <class F>
void rk4_step(F&& f, double t, std::span<const double> x, double h, double e, std::span<double> out,
              std::span<double> k, std::span<double> tmp) {
  const std::size_t n = x.size();
  auto k1 = k.subspan(0, n), k2 = k.subspan(n, n), k3 = k.subspan(2 * n, n), k4 = k.subspan(3 * n, n);
  f(t, x, e, k1);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
  f(t + 0.5 * h, std::span<const double>(tmp), e, k2);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
  f(t + 0.5 * h, std::span<const double>(tmp), e, k3);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
  f(t + h, std::span<const double>(tmp), e, k4);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

/// Fixed-step RK4 with zero drug effect, sampled at integer days t0..t1.
Trajectory integrate_rk4(const OdeProblem& problem, double step = kDefaultStep);

/// Fixed-step RK4 where the drug effect on day d is `daily_effect[d - t0]`
/// over [d, d+1). Days past the end of `daily_effect` have zero effect.
Trajectory integrate_daily(const OdeProblem& problem, std::span<const double> daily_effect,
                           double step = kDefaultStep);

/// As integrate_daily with effect e_eff * relative_dose(d) from the schedule.
Trajectory integrate_piecewise(const OdeProblem& problem, const TreatmentSchedule& schedule,
                               double e_eff, double step = kDefaultStep);

/// Drug effect per day on [t0, t1].
std::vector<double> daily_drug_effect(const TreatmentSchedule& schedule, double e_eff, int t0, int t1);

/// CSV `day,compartment_0..k,platelets`.
void write_trajectory_csv(const Trajectory& trajectory, const std::filesystem::path& path);

}  // namespace hemadyn
