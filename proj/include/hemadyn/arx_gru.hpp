#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hemadyn/core_data.hpp"
#include "hemadyn/objectives.hpp"
#include "hemadyn/series.hpp"

namespace hemadyn {

/// GRU cell with two inputs (previous normalized log count, relative dose)
/// and a linear readout.
///
/// Flat layout: for each gate in (update z, reset r, candidate n) a weight
/// matrix h x (2 + h) over [x, h] (row-major) followed by its bias; then the
/// readout weights (h) and readout bias.
class GruNet {
 public:
  static constexpr int kInputs = 2;

  GruNet() : GruNet(8) {}
  explicit GruNet(int hidden);
  GruNet(int hidden, std::vector<double> parameters);

  static std::size_t parameter_count(int hidden) noexcept;

  int hidden() const noexcept { return hidden_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  std::size_t gate_offset(int gate) const noexcept;  ///< 0 = z, 1 = r, 2 = n
  std::size_t readout_offset() const noexcept;
  bool is_weight(std::size_t index) const;
  double weight_norm_squared() const;

  bool operator==(const GruNet&) const = default;

 private:
  int hidden_;
  std::vector<double> params_;
};

/// Glorot-uniform weights, zero biases.
GruNet init_gru(int hidden, std::uint64_t seed);

/// Intermediate values of one step, enough for its backward pass.
struct GruStepCache {
  double x[GruNet::kInputs] = {0.0, 0.0};
  std::vector<double> h_prev, z, r, n, h;
};

struct GruStepResult {
  double output = 0.0;
  std::vector<double> hidden;
};

/// z = sig(Wz[x,h]+bz), r = sig(Wr[x,h]+br), n = tanh(Wn[x, r*h]+bn),
/// h' = (1-z)*n + z*h, output = w.h' + b.
GruStepResult gru_step(const GruNet& net, std::span<const double> input, std::span<const double> hidden);
double gru_step(const GruNet& net, std::span<const double> input, std::span<const double> hidden,
                GruStepCache& cache);

/// Backward through one step. Accumulates parameter cotangents into
/// `param_grad`; overwrites `g_input` (2) and `g_hidden_prev` (h).
void gru_step_backward(const GruNet& net, const GruStepCache& cache, double g_output,
                       std::span<const double> g_hidden, std::span<double> param_grad, std::span<double> g_input,
                       std::span<double> g_hidden_prev);

struct ArxConfig {
  int hidden = 8;
  double l2 = 1e-4;
  double baseline_penalty = 0.0;  ///< pull of predictions toward the baseline
  /// Penalize every rollout day of the training window; false restricts the
  /// penalty to pre-treatment days.
  bool baseline_all_days = true;
  double smse_neighbor = 0.3;
  int warmup_days = 3;            ///< drug-free steps before the first treatment
  double scale = 0.5;             ///< normalized value = (ln count - baseline) / scale
  LrSchedule schedule;

  void validate() const;
};

/// One input series: treatment schedule, baseline (log count) and observed
/// log counts on the day grid.
struct ArxSeries {
  TreatmentSchedule schedule;
  double baseline = 0.0;
  std::vector<DayValue> observed;  ///< sorted by day, one value per day
};

/// Series from a record's observations subset; the baseline is the first
/// observation of the full record. Same-day observations are averaged.
ArxSeries make_series(const PatientRecord& record, const std::vector<Observation>& observations);

/// First simulated day: warm-up before the first treatment, or `start_day`
/// if earlier.
int rollout_start(const ArxSeries& series, int start_day, const ArxConfig& config);

/// Daily log-count predictions for start_day..end_day. The recurrence runs
/// from rollout_start with zero hidden state and the baseline as first
/// autoregressive input. Closed loop feeds each prediction back; with teacher
/// forcing observed days feed the observation instead. The exogenous input at
/// step d is the relative dose of day d-1.
DailySeries rollout(const GruNet& net, const ArxSeries& series, int start_day, int end_day, bool teacher_forcing,
                    const ArxConfig& config);

/// A training series for ArxObjective.
struct ArxTrainingSeries {
  ArxSeries series;
  std::vector<DayValue> targets;
  bool teacher_forcing = false;
};

/// Mean over series of
///   SMSE(targets, rollout) + baseline_penalty * mean_d (yhat_d - baseline)^2
/// (d over the penalty window of ArxConfig)
/// plus l2 |W|^2, with exact BPTT gradients through the feedback loop.
class ArxObjective {
 public:
  ArxObjective(int hidden, std::vector<ArxTrainingSeries> series, ArxConfig config);

  std::size_t dimension() const noexcept { return GruNet::parameter_count(hidden_); }
  double loss(std::span<const double> theta) const;
  double loss_and_gradient(std::span<const double> theta, std::span<double> grad) const;

 private:
  double series_loss(const GruNet& net, const ArxTrainingSeries& s, std::span<double> grad) const;

  int hidden_;
  std::vector<ArxTrainingSeries> series_;
  ArxConfig config_;
};

double arx_loss(const GruNet& net, const PatientRecord& record, const ArxConfig& config, const CycleSplit& split);
std::vector<double> arx_gradient(const GruNet& net, const PatientRecord& record, const ArxConfig& config,
                                 const CycleSplit& split);

}  // namespace hemadyn
