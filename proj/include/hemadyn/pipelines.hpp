#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "hemadyn/arx_gru.hpp"
#include "hemadyn/core_data.hpp"
#include "hemadyn/mech_models.hpp"
#include "hemadyn/objectives.hpp"
#include "hemadyn/ude.hpp"

namespace hemadyn {

enum class ModelId { Friberg, Henrich, MS, MSRev, UdeAdd, UdeRep, ArxGru };

std::string_view to_string(ModelId id);
ModelId model_id_from_string(std::string_view name);
const std::vector<ModelId>& all_model_ids();
bool is_mechanistic(ModelId id);
MechModel mech_model_of(ModelId id);

// ---- seeds ---------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);
/// splitmix64(master ^ fnv1a64(patient_id)).
std::uint64_t patient_seed(std::uint64_t master, std::string_view patient_id);
/// Independent stream for a sub-task (model, split, stage) of one patient.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

// ---- fitted models -------------------------------------------------------

enum class InitialCondition { FittedC0, FirstObservation };

std::string_view to_string(InitialCondition ic);
InitialCondition initial_condition_from_string(std::string_view name);

struct MechFit {
  MechParams params;
  /// Circulating level of the initial steady state when it differs from C0.
  std::optional<double> initial_level;
};

struct UdeFit {
  UdeModel model;
  int warmup_days = 7;
};

struct ArxFit {
  GruNet net;
  ArxConfig config;
  double baseline = 0.0;  ///< ln count the normalization is centred on
};

using FitParameters = std::variant<MechFit, UdeFit, ArxFit>;

struct FitResult {
  ModelId model = ModelId::Friberg;
  std::string patient_id;
  int n_train = 0;
  FitParameters parameters;
  double train_loss = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string termination;
};

/// Daily ln-platelet predictions on start_day..end_day for the record's
/// schedule.
DailySeries predict_daily(const FitResult& fit, const TreatmentSchedule& schedule, int start_day, int end_day);

// ---- mechanistic fits ----------------------------------------------------

struct MechFitConfig {
  double sigma = 5.0;
  bool use_smse = false;  ///< data term: plain MSE by default
  NelderMeadOptions optimizer;
  int max_rounds = 3;     ///< simplex restarts from the previous optimum
  InitialCondition initial = InitialCondition::FittedC0;
};

/// Fits ln(gamma, MTT, C0, E_eff), plus ln k_cyc for MS / MS-rev (k_cyc2
/// stays tied at k_cyc/60), by Nelder-Mead on the penalized objective
/// starting at the population means.
FitResult fit_mechanistic(ModelId model, const PatientRecord& record, const CycleSplit& split,
                          const MechFitConfig& config = {});

/// Names of the fitted parameters in optimization order.
std::vector<std::string> fitted_parameter_names(MechModel model);

// ---- hybrid and data-driven training ------------------------------------

struct AdamRun {
  std::vector<double> best;
  double best_loss = 0.0;
  int epochs = 0;
  int retries = 0;
};

struct UdeTrainConfig {
  MlpSpec spec;
  UdeLossConfig loss;
  LrSchedule schedule;
  int epochs = 2000;
  double a = 0.005;
  bool skip_pretraining = false;
  int pretrain_regression_epochs = 10000; ///< rep stage A: flux regression on Friberg states
  int pretrain_trajectory_epochs = 300;   ///< rep stage A: trajectory matching
  double pretrain_lr = 1e-2;
};

FitResult train_ude_add(const PatientRecord& record, const CycleSplit& split, const FitResult& friberg_fit,
                        const UdeTrainConfig& config, std::uint64_t seed);

FitResult train_ude_rep(const PatientRecord& record, const CycleSplit& split, const FitResult& friberg_fit,
                        const UdeTrainConfig& config, std::uint64_t seed);

/// Stage A of UDE-rep alone: network trained so the UDE-rep trajectory
/// reproduces the Friberg fit over the full schedule calendar.
UdeFit pretrain_ude_rep(const PatientRecord& record, const FitResult& friberg_fit, const UdeTrainConfig& config,
                        std::uint64_t seed);

struct ScenarioConfig {
  int count = 50;
  double dose_jitter = 0.2;   ///< uniform relative jitter per treatment day
  int start_jitter = 2;       ///< uniform integer shift of each later cycle start
  bool population_mode = false;  ///< simulate population instead of individual parameters
};

struct ArxTrainConfig {
  ArxConfig arx;
  ScenarioConfig scenarios;
  int pretrain_epochs = 1000;
  int finetune_epochs = 1000;
  double pretrain_lr = 1e-2;
  double finetune_lr = 1e-3;
};

/// Virtual therapy scenarios from the Friberg fit: jittered copies of the
/// patient's schedule with dense daily ln-count targets.
std::vector<ArxTrainingSeries> virtual_scenarios(const PatientRecord& record, const FitResult& friberg_fit,
                                                 const ArxTrainConfig& config, std::uint64_t seed);

/// Teacher-forced pre-training on virtual scenarios.
GruNet pretrain_arx(const PatientRecord& record, const FitResult& friberg_fit, const ArxTrainConfig& config,
                    std::uint64_t seed);

FitResult train_arx_gru(const PatientRecord& record, const CycleSplit& split, const FitResult& friberg_fit,
                        const ArxTrainConfig& config, std::uint64_t seed);

// ---- dispatch ------------------------------------------------------------

struct ModelConfigs {
  MechFitConfig mech;
  UdeTrainConfig ude;
  ArxTrainConfig arx;
};

/// Seed of one (patient, model, n_train) fit under a master seed.
std::uint64_t fit_seed(std::uint64_t master, std::string_view patient_id, ModelId model, int n_train);

/// Fits any model on one split. Hybrid and ARX models require `friberg`,
/// the Friberg fit of the same split.
FitResult fit_model(ModelId model, const PatientRecord& record, const CycleSplit& split, const ModelConfigs& configs,
                    std::uint64_t seed, const FitResult* friberg = nullptr);

// ---- virtual cohorts -----------------------------------------------------

struct VirtualCohortSpec {
  int n_patients = 40;
  MechModel model = MechModel::Friberg;
  MechParams population = MechParams::population(MechModel::Friberg);
  /// Lognormal coefficients of variation of gamma, MTT, C0, E_eff.
  double cv_gamma = 0.2, cv_mtt = 0.2, cv_c0 = 0.2, cv_e_eff = 0.2;
  std::vector<int> cycle_lengths{14, 21};
  int min_cycles = 4;
  int max_cycles = 6;
  int treatment_days = 1;
  double dose_jitter = 0.0;
  double dense_fraction = 0.5;
  int dense_min_obs = 3;
  int dense_max_obs = 5;
  int sparse_obs = 2;
  bool baseline_observation = true;  ///< first sample on the first cycle start (pre-dose)
  double noise_sd = 0.0;          ///< lognormal multiplicative sd on counts
  /// Drug effect of cycle k (0-based) is scaled by 1 + cumulative_toxicity * k
  /// for the deformed fraction of patients.
  double cumulative_toxicity = 0.0;
  double deformed_fraction = 0.0;
  std::string id_prefix = "v";
  std::uint64_t seed = 0;

  void validate() const;
};

struct VirtualPatient {
  PatientRecord record;
  MechParams truth;
  double toxicity_growth = 0.0;
};

std::vector<VirtualPatient> generate_virtual_cohort(const VirtualCohortSpec& spec);

// ---- parallel map --------------------------------------------------------

/// Applies f to 0..n-1 on up to `jobs` threads; results keep index order.
/// The exception of the lowest failing index is rethrown.
template <class F>
auto parallel_map(std::size_t n, int jobs, F&& f) -> std::vector<decltype(f(std::size_t{}))> {
  using R = decltype(f(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, jobs));
  if (threads == 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

int default_jobs();

}  // namespace hemadyn
