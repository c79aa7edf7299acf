#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hemadyn/core_data.hpp"
#include "hemadyn/objectives.hpp"
#include "hemadyn/pipelines.hpp"

namespace hemadyn {

inline constexpr double kDefaultSignificance = 0.05;

/// SMSE of the fit's daily predictions against the test observations only.
double test_smse(const FitResult& fit, const PatientRecord& record, const CycleSplit& split,
                 SmseWeights weights = {});

/// Smallest number of nonzero paired differences for which a p-value is
/// reported.
inline constexpr int kMinWilcoxonPairs = 5;
/// Sample sizes up to this use the exact null distribution.
inline constexpr int kExactWilcoxonLimit = 25;

/// One-sided Wilcoxon signed-rank test of H1 "other > best" on paired
/// values. Zero differences are dropped and tied magnitudes get mid-ranks.
/// Returns nullopt when fewer than kMinWilcoxonPairs nonzero pairs remain.
std::optional<double> wilcoxon_one_sided(std::span<const double> best, std::span<const double> other);

struct PatientScore {
  std::string patient_id;
  double smse = 0.0;
};

struct EvalCell {
  ModelId model = ModelId::Friberg;
  Group group = Group::De14;
  int n_train = 1;
  std::vector<PatientScore> scores;  ///< sorted by patient id
  std::optional<double> mean;        ///< nullopt marks a missing cell
  bool best = false;
  bool not_inferior = false;
  std::optional<double> p_value;     ///< against the column's best; nullopt for best or not computable
};

struct ScoreEntry {
  std::string patient_id;
  Group group = Group::De14;
  ModelId model = ModelId::Friberg;
  int n_train = 1;
  double smse = 0.0;
};

struct EvalReport {
  std::vector<ModelId> models;
  std::vector<int> n_train;
  std::vector<Group> groups;
  std::vector<EvalCell> cells;  ///< group-major, then model, then n_train
  double alpha = kDefaultSignificance;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::string> failed_fits;  ///< fits that raised during training, listed in metadata

  const EvalCell& cell(ModelId model, Group group, int n_train) const;
};

/// Cell means, best-in-column flags (ties all flagged) and significance
/// against the best cell of each (group, n_train) column. When several cells
/// tie for best, the first in model order is the reference for the test.
/// A cell whose test cannot be computed is not flagged inferior.
EvalReport aggregate(const std::vector<ScoreEntry>& scores, std::vector<ModelId> models, std::vector<int> n_train,
                     std::vector<Group> groups, double alpha = kDefaultSignificance);

/// Writes heatmap_<group>.csv (models x n_train means), significance.csv,
/// scores_long.csv and metadata.json into out_dir.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace hemadyn
