#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hemadyn/core_data.hpp"
#include "hemadyn/ode.hpp"

namespace hemadyn {

enum class MechModel { Friberg, Henrich, MS, MSRev };

std::string_view to_string(MechModel model);
MechModel mech_model_from_string(std::string_view name);

inline constexpr double kHoursPerDay = 24.0;

/// Core transit-compartment parameters shared by all four models.
struct FribergParams {
  double gamma = 0.316;     ///< feedback exponent
  double mtt_hours = 195.0; ///< mean transit time
  double c0 = 270e9;        ///< steady-state platelets, cells/L
  double e_eff = 2.0;       ///< drug effect at unit dose

  /// Transition rate in 1/day: 4 / MTT.
  double k_tr() const noexcept { return 4.0 * kHoursPerDay / mtt_hours; }
  static double mtt_from_k_tr(double k_tr) noexcept { return 4.0 * kHoursPerDay / k_tr; }

  bool operator==(const FribergParams&) const = default;
};

/// Parameters of any of the four mechanistic models. Fields that a model does
/// not use are ignored by it.
struct MechParams {
  MechModel model = MechModel::Friberg;
  FribergParams core;
  double f_tr = 0.7;          ///< Henrich: k_p = f_tr k_tr, k_s = (1 - f_tr) k_tr
  double f_p = 0.58;          ///< MS / MS-rev proliferative fraction
  double k_cyc = 1.9;         ///< MS / MS-rev, 1/day
  double k_cyc2 = 1.9 / 60.0; ///< MS-rev only, 1/day

  /// Literature population averages; MS-rev uses its own drug effect of 120.
  static MechParams population(MechModel model);

  /// Throws PreconditionError when a field the model uses is out of range.
  void validate() const;

  bool operator==(const MechParams&) const = default;
};

std::size_t state_dimension(MechModel model);
/// Compartment names in state order; the platelet compartment C is last.
std::vector<std::string> compartment_names(MechModel model);

/// e_eff * relative_dose(floor(t)).
double drug_effect(double t, const TreatmentSchedule& schedule, double e_eff);

// Right-hand sides. State layouts:
//   Friberg  (P, T1, T2, T3, C)
//   Henrich  (S, P, T1, T2, T3, C)
//   MS/MSRev (P, Q1, Q2, T1, T2, T3, C)
// All throw DomainError when C <= 0.
void friberg_rhs(const FribergParams& p, std::span<const double> x, double e, std::span<double> dx);
void henrich_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx);
void ms_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx);
void msrev_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx);
void mech_rhs(const MechParams& p, std::span<const double> x, double e, std::span<double> dx);

/// Analytic drug-free steady state with circulating platelets at `c0`
/// (defaults to the parameter's own C0).
std::vector<double> steady_state(const MechParams& p, std::optional<double> c0 = std::nullopt);

struct SimulationOptions {
  int start_day = 0;
  double step = kDefaultStep;
  std::optional<std::vector<double>> initial_state;  ///< defaults to the steady state
};

OdeProblem make_problem(const MechParams& p, int t0, int t1, std::vector<double> initial_state);

/// Simulates days start_day..horizon_days. Requires horizon >= last event day.
Trajectory simulate(const MechParams& p, const TreatmentSchedule& schedule, int horizon_days,
                    const SimulationOptions& options = {});

}  // namespace hemadyn
