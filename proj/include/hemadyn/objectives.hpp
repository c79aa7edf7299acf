#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hemadyn/core_data.hpp"
#include "hemadyn/series.hpp"

namespace hemadyn {

/// Weight of the t-1 / t+1 neighbor terms of the smoothed MSE.
struct SmseWeights {
  double neighbor_weight = 0.3;
};

/// Smoothed mean-squared error
///   (1/N) [ sum_i (y_i - yhat_d)^2 + w sum_i ((y_i - yhat_{d-1})^2 + (y_i - yhat_{d+1})^2) ]
/// with d the grid day of observation i. Neighbor terms outside the
/// prediction horizon are dropped; N is the number of observations.
/// Throws PreconditionError for an observation day outside `yhat`.
double smse(std::span<const DayValue> y, const DailySeries& yhat, SmseWeights w = {});

/// Adds scale * d smse / d yhat to `grad` (indexed like yhat.values).
/// Returns the smse value.
double smse_with_gradient(std::span<const DayValue> y, const DailySeries& yhat, SmseWeights w,
                          std::span<double> grad, double scale = 1.0);

/// Plain MSE on matched days.
double mse(std::span<const DayValue> y, const DailySeries& yhat);
double mse_with_gradient(std::span<const DayValue> y, const DailySeries& yhat, std::span<double> grad,
                         double scale = 1.0);

/// Population constraint of the mechanistic fits.
struct PenaltyConfig {
  double sigma = 5.0;
  std::vector<double> population;  ///< p0_j, all > 0
};

/// sum_j (ln p_j - ln p0_j)^2 / sigma^2.
double parameter_penalty(std::span<const double> params, const PenaltyConfig& config);

/// MSE over observations plus the parameter penalty.
double penalized_objective(std::span<const DayValue> y, const DailySeries& yhat, std::span<const double> params,
                           const PenaltyConfig& config);

/// Stepwise exponential learning-rate decay:
///   lr(epoch) = lr_start * exp(decay * min(floor(epoch / decay_step_length), n_decay_steps))
struct LrSchedule {
  double lr_start = 1e-3;
  double decay = -0.3;
  int decay_step_length = 400;
  int n_decay_steps = 5;

  double rate(int epoch) const;
  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t dim = 0) : m(dim, 0.0), v(dim, 0.0) {}
};

void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient,
               const LrSchedule& schedule, int epoch);

struct NelderMeadOptions {
  double initial_step = 0.1;
  double xtol = 1e-8;       ///< simplex diameter (max-norm distance to the best vertex)
  int max_iterations = 2000;
  int max_restarts = 3;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  bool converged = false;    ///< true iff terminated on the diameter criterion
  std::string termination;
};

using Objective = std::function<double(std::span<const double>)>;

/// Downhill simplex minimisation. A non-finite objective value during the
/// search restarts from the best vertex with a halved simplex; more than
/// `max_restarts` restarts raise NumericalError.
NelderMeadResult nelder_mead(const Objective& objective, std::vector<double> x0,
                             const NelderMeadOptions& options = {});

}  // namespace hemadyn
