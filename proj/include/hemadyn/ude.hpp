#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hemadyn/core_data.hpp"
#include "hemadyn/mech_models.hpp"
#include "hemadyn/neural.hpp"
#include "hemadyn/ode.hpp"

namespace hemadyn {

enum class UdeVariant { Add, Rep };

std::string_view to_string(UdeVariant variant);
UdeVariant ude_variant_from_string(std::string_view name);

/// The tanh(a P) factor takes P in units of 1e9 cells/L, the clinical unit in
/// which C0 is about 270.
inline constexpr double kTanhCellUnit = 1e9;

/// Friberg model whose proliferation equation is augmented (Add) or replaced
/// (Rep) by a network term tanh(aP) * k_tr * C0 * NN(P/C0, C/C0, e/E_eff).
///
///   Add: dP/dt = k_tr P (1-e) (C0/C)^gamma - k_tr P + tanh(aP) k_tr C0 NN
///   Rep: dP/dt = tanh(aP) k_tr C0 NN (1-e) - k_tr P
///
/// The transit and circulating compartments follow the Friberg equations.
struct UdeModel {
  UdeVariant variant = UdeVariant::Add;
  FribergParams base;
  MlpNet net{MlpSpec{}};
  double a = 0.005;

  void validate() const;
};

/// Loss weights for UDE training.
struct UdeLossConfig {
  double l2 = 0.0;              ///< weight decay on network weights
  double couple_steady = 0.0;   ///< pre-treatment deviation from ln C0
  double smse_neighbor = 0.3;
  int warmup_days = 7;          ///< simulated drug-free days before the first cycle
  double param_scale = 0.2;     ///< log-parameter standardization spread
  FribergParams reference;      ///< centre of the log-parameter standardization

  void validate() const;
};

/// Throws DomainError for C <= 0 (Add) and NumericalError for a non-finite
/// network output.
void ude_rhs(const UdeModel& model, std::span<const double> x, double e, std::span<double> dx);

/// Simulates days start_day..horizon from the Friberg steady state at C0
/// (or options.initial_state).
Trajectory simulate_ude(const UdeModel& model, const TreatmentSchedule& schedule, int horizon_days,
                        const SimulationOptions& options = {});

/// Number of mechanistic entries appended after the network parameters in
/// the training vector: (gamma, mtt, c0, e_eff) in standardized log space,
/// p = reference * exp(param_scale * theta).
inline constexpr std::size_t kUdeMechParameters = 4;

/// Loss and exact discretized gradient of one UDE training problem.
///
/// loss = SMSE(targets, ln C) + l2 |W|^2
///        + couple_steady * mean_{d in [t0, first event]} (ln C(d) - ln C0)^2
/// where the trajectory starts `warmup_days` before the first cycle.
class UdeObjective {
 public:
  UdeObjective(UdeModel prototype, TreatmentSchedule schedule, std::vector<DayValue> targets,
               UdeLossConfig config, double step = kDefaultStep);

  std::size_t dimension() const noexcept;
  std::vector<double> pack(const UdeModel& model) const;
  UdeModel unpack(std::span<const double> theta) const;

  int first_day() const noexcept { return t0_; }
  int last_day() const noexcept { return t1_; }

  double loss(std::span<const double> theta) const;
  /// Overwrites `grad` with d loss / d theta. Throws NumericalError naming
  /// the first non-finite component.
  double loss_and_gradient(std::span<const double> theta, std::span<double> grad) const;

 private:
  double evaluate(std::span<const double> theta, std::span<double> grad) const;

  UdeModel prototype_;
  TreatmentSchedule schedule_;
  std::vector<DayValue> targets_;
  UdeLossConfig config_;
  int substeps_;
  int t0_ = 0;
  int t1_ = 0;
  int steady_end_ = 0;
  std::vector<double> dose_;  ///< relative dose per day from t0
};

/// Loss of `model` on the training observations (log scale) of `split`.
double ude_loss(const UdeModel& model, const PatientRecord& record, const UdeLossConfig& config,
                const CycleSplit& split);

/// Gradient over (network parameters, standardized log mechanistic
/// parameters) at `model`.
std::vector<double> ude_gradient(const UdeModel& model, const PatientRecord& record, const UdeLossConfig& config,
                                 const CycleSplit& split);

}  // namespace hemadyn
