#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hemadyn/eval.hpp"
#include "hemadyn/pipelines.hpp"
#include "hemadyn/serialization.hpp"

namespace hemadyn {

/// Settings of one command-line run.
struct RunConfig {
  std::filesystem::path observations;  ///< fit / evaluate input, default <out_dir>/observations.csv
  std::filesystem::path schedules;     ///< fit / evaluate input, default <out_dir>/schedules.csv
  std::filesystem::path schedule;      ///< simulate: schedule CSV
  std::filesystem::path params;        ///< simulate: optional parameter JSON
  std::filesystem::path fit;           ///< simulate: fitted model JSON instead of --model
  std::string model = "friberg";       ///< simulate
  int days = 0;                        ///< simulate horizon
  std::vector<ModelId> models = all_model_ids();
  std::vector<int> n_train{1, 2, 3, 4, 5};
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "out";
  std::filesystem::path fits_dir;      ///< default <out_dir>/fits
  int jobs = 0;                        ///< 0 = available cores
  double alpha = kDefaultSignificance;
  double density_threshold = kDefaultDensityThreshold;
  ModelConfigs hp;
  VirtualCohortSpec cohort;
};

/// Overwrites the fields named in a run.json object.
void apply_run_config(const Json& j, RunConfig& config);

/// The explicit seed, else HEMADYN_SEED, else PreconditionError.
std::uint64_t resolve_seed(const RunConfig& config);

/// Hex FNV-1a of the canonical JSON of everything that affects results.
std::string config_hash(const RunConfig& config);

std::filesystem::path fit_path(const std::filesystem::path& fits_dir, std::string_view patient_id, ModelId model,
                               int n_train);
/// Marker written instead of a fit when training raised.
std::filesystem::path failure_path(const std::filesystem::path& fits_dir, std::string_view patient_id, ModelId model,
                                   int n_train);

/// Training splits usable for `record`: 1 <= n < recorded cycles with test data.
std::vector<int> usable_splits(const PatientRecord& record, const std::vector<int>& requested);

/// Daily trajectory CSV of a mechanistic model or a fitted model.
void cmd_simulate(const RunConfig& config, std::ostream& log);
/// Virtual cohort CSVs plus truth.json.
void cmd_cohort(const RunConfig& config, std::ostream& log);
/// One FitResult JSON per (patient, model, n_train). Fits that raise leave
/// a failure marker; the command then throws after finishing the rest.
void cmd_fit(const RunConfig& config, std::ostream& log);
/// Scores the stored fits and writes the report to <out_dir>/report.
EvalReport cmd_evaluate(const RunConfig& config, std::ostream& log);

}  // namespace hemadyn
