#include "hemadyn/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hemadyn/errors.hpp"

namespace hemadyn {

namespace {

void require_day(const DailySeries& yhat, int day) {
  if (!yhat.contains(day))
    throw PreconditionError("observation on day " + std::to_string(day) + " outside prediction horizon [" +
                            std::to_string(yhat.first_day) + ", " + std::to_string(yhat.last_day()) + "]");
}

}  // namespace

double smse_with_gradient(std::span<const DayValue> y, const DailySeries& yhat, SmseWeights w,
                          std::span<double> grad, double scale) {
  if (y.empty()) throw PreconditionError("smse of an empty observation set");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != yhat.values.size()) throw PreconditionError("gradient size mismatch");
  const double inv_n = 1.0 / static_cast<double>(y.size());
  double sum_center = 0.0, sum_neighbor = 0.0;
  for (const auto& obs : y) {
    require_day(yhat, obs.day);
    const std::size_t i = yhat.index(obs.day);
    const double r = obs.value - yhat.values[i];
    sum_center += r * r;
    if (want_grad) grad[i] -= scale * 2.0 * r * inv_n;
    for (int nb : {obs.day - 1, obs.day + 1}) {
      if (!yhat.contains(nb)) continue;
      const std::size_t j = yhat.index(nb);
      const double rn = obs.value - yhat.values[j];
      sum_neighbor += rn * rn;
      if (want_grad) grad[j] -= scale * 2.0 * w.neighbor_weight * rn * inv_n;
    }
  }
  return (sum_center + w.neighbor_weight * sum_neighbor) * inv_n;
}

double smse(std::span<const DayValue> y, const DailySeries& yhat, SmseWeights w) {
  return smse_with_gradient(y, yhat, w, {}, 1.0);
}

double mse_with_gradient(std::span<const DayValue> y, const DailySeries& yhat, std::span<double> grad,
                         double scale) {
  return smse_with_gradient(y, yhat, SmseWeights{0.0}, grad, scale);
}

double mse(std::span<const DayValue> y, const DailySeries& yhat) { return smse(y, yhat, SmseWeights{0.0}); }

double parameter_penalty(std::span<const double> params, const PenaltyConfig& config) {
  if (params.size() != config.population.size()) throw PreconditionError("parameter/population size mismatch");
  if (!(config.sigma > 0.0)) throw PreconditionError("sigma must be positive");
  double sum = 0.0;
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (!(params[j] > 0.0) || !(config.population[j] > 0.0))
      throw PreconditionError("penalized parameters must be positive (index " + std::to_string(j) + ")");
    const double d = std::log(params[j]) - std::log(config.population[j]);
    sum += d * d;
  }
  return sum / (config.sigma * config.sigma);
}

double penalized_objective(std::span<const DayValue> y, const DailySeries& yhat, std::span<const double> params,
                           const PenaltyConfig& config) {
  return mse(y, yhat) + parameter_penalty(params, config);
}

double LrSchedule::rate(int epoch) const {
  const int completed = decay_step_length > 0 ? std::min(epoch / decay_step_length, n_decay_steps) : 0;
  return lr_start * std::exp(decay * completed);
}

void LrSchedule::validate() const {
  if (!(lr_start > 0.0)) throw PreconditionError("lr_start must be positive");
  if (decay > 0.0) throw PreconditionError("decay must be <= 0");
  if (decay_step_length <= 0) throw PreconditionError("decay_step_length must be positive");
  if (n_decay_steps < 0) throw PreconditionError("n_decay_steps must be >= 0");
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient,
               const LrSchedule& schedule, int epoch) {
  if (params.size() != gradient.size() || state.m.size() != params.size())
    throw PreconditionError("adam_step dimension mismatch");
  ++state.t;
  const double lr = schedule.rate(epoch);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gradient[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

namespace {

struct Vertex {
  std::vector<double> x;
  double f;
};

double diameter(const std::vector<Vertex>& simplex) {
  double d = 0.0;
  for (std::size_t i = 1; i < simplex.size(); ++i) {
    for (std::size_t k = 0; k < simplex[0].x.size(); ++k) d = std::max(d, std::abs(simplex[i].x[k] - simplex[0].x[k]));
  }
  return d;
}

}  // namespace

NelderMeadResult nelder_mead(const Objective& objective, std::vector<double> x0, const NelderMeadOptions& options) {
  const std::size_t n = x0.size();
  if (n == 0) throw PreconditionError("nelder_mead needs at least one parameter");
  NelderMeadResult result;

  auto eval = [&](const std::vector<double>& x) {
    ++result.evaluations;
    return objective(std::span<const double>(x));
  };

  const double f0 = eval(x0);
  if (!std::isfinite(f0)) throw PreconditionError("objective is not finite at the initial point");

  Vertex best{std::move(x0), f0};
  double step = options.initial_step;

  while (true) {
    std::vector<Vertex> simplex;
    simplex.push_back(best);
    bool non_finite = false;
    for (std::size_t i = 0; i < n && !non_finite; ++i) {
      Vertex v{best.x, 0.0};
      v.x[i] += step;
      v.f = eval(v.x);
      non_finite = !std::isfinite(v.f);
      simplex.push_back(std::move(v));
    }

    auto order = [&] {
      std::stable_sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
    };

    while (!non_finite) {
      order();
      if (diameter(simplex) < options.xtol) {
        result.converged = true;
        result.termination = "simplex diameter below tolerance";
        break;
      }
      if (result.iterations >= options.max_iterations) {
        result.termination = "iteration limit reached";
        break;
      }
      ++result.iterations;

      std::vector<double> centroid(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i].x[k] / static_cast<double>(n);
      const Vertex& worst = simplex[n];
      auto along = [&](double coef) {
        std::vector<double> x(n);
        for (std::size_t k = 0; k < n; ++k) x[k] = centroid[k] + coef * (worst.x[k] - centroid[k]);
        return x;
      };

      Vertex refl{along(-1.0), 0.0};
      refl.f = eval(refl.x);
      if (!std::isfinite(refl.f)) { non_finite = true; break; }

      if (refl.f < simplex[0].f) {
        Vertex expd{along(-2.0), 0.0};
        expd.f = eval(expd.x);
        if (!std::isfinite(expd.f)) { non_finite = true; break; }
        simplex[n] = expd.f < refl.f ? std::move(expd) : std::move(refl);
        continue;
      }
      if (refl.f < simplex[n - 1].f) {
        simplex[n] = std::move(refl);
        continue;
      }
      const bool outside = refl.f < worst.f;
      Vertex contr{along(outside ? -0.5 : 0.5), 0.0};
      contr.f = eval(contr.x);
      if (!std::isfinite(contr.f)) { non_finite = true; break; }
      if (contr.f < (outside ? refl.f : worst.f)) {
        simplex[n] = std::move(contr);
        continue;
      }
      for (std::size_t i = 1; i <= n && !non_finite; ++i) {
        for (std::size_t k = 0; k < n; ++k) simplex[i].x[k] = simplex[0].x[k] + 0.5 * (simplex[i].x[k] - simplex[0].x[k]);
        simplex[i].f = eval(simplex[i].x);
        non_finite = !std::isfinite(simplex[i].f);
      }
    }

    // Best finite vertex seen so far.
    for (const auto& v : simplex) {
      if (std::isfinite(v.f) && v.f < best.f) best = v;
    }
    if (!non_finite) break;
    if (result.restarts >= options.max_restarts)
      throw NumericalError("nelder_mead: non-finite objective after " + std::to_string(result.restarts) + " restarts");
    ++result.restarts;
    step *= 0.5;
  }

  result.x = std::move(best.x);
  result.value = best.f;
  return result;
}

}  // namespace hemadyn
