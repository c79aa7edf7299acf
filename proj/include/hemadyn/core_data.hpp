#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hemadyn {

/// One platelet measurement. `time` is in days since therapy start.
struct Observation {
  double time = 0.0;
  double platelet_count = 0.0;

  bool operator==(const Observation&) const = default;
};

struct DoseEvent {
  int day = 0;
  double relative_dose = 1.0;  ///< 1 encodes the standard dose

  bool operator==(const DoseEvent&) const = default;
};

/// Treatment days with relative doses plus the calendar of cycle starts.
///
/// Events on the same day are merged into one event whose dose is the sum of
/// the individual doses. Zero-dose events carry no information and are
/// dropped, so two schedules compare equal iff they act identically.
class TreatmentSchedule {
 public:
  TreatmentSchedule() = default;
  TreatmentSchedule(std::vector<DoseEvent> events, std::vector<int> cycle_starts, int cycle_length);

  /// `n_cycles` cycles of `cycle_length` days starting at day 0, with a
  /// standard dose on the first `treatment_days` days of every cycle.
  static TreatmentSchedule regular(int n_cycles, int cycle_length, int treatment_days = 1,
                                   double relative_dose = 1.0);

  const std::vector<DoseEvent>& events() const noexcept { return events_; }
  const std::vector<int>& cycle_starts() const noexcept { return cycle_starts_; }
  int cycle_length() const noexcept { return cycle_length_; }
  int n_cycles() const noexcept { return static_cast<int>(cycle_starts_.size()); }

  /// Relative dose applied on `day` (0 on non-treatment days).
  double relative_dose(int day) const;
  std::optional<int> first_event_day() const;
  std::optional<int> last_event_day() const;
  /// Nominal last day of the calendar: start of the last cycle plus one cycle.
  int calendar_end() const;
  /// Index of the cycle containing `time` (cycles extend to the next start,
  /// the last one indefinitely); -1 before the first cycle.
  int cycle_index(double time) const;

  bool operator==(const TreatmentSchedule&) const = default;

 private:
  std::vector<DoseEvent> events_;
  std::vector<int> cycle_starts_;
  int cycle_length_ = 0;
};

enum class Group { De14, De21, Sp14, Sp21 };

std::string_view to_string(Group group);
Group group_from_string(std::string_view name);

/// Scale of the stored platelet counts.
enum class CountScale { Linear, Log };

/// Minimum number of cycles with more than one observation each.
inline constexpr int kMinObservedCycles = 4;

struct PatientRecord {
  std::string id;
  std::vector<Observation> observations;
  TreatmentSchedule schedule;
  Group group = Group::De14;
  CountScale scale = CountScale::Linear;

  bool operator==(const PatientRecord&) const = default;
};

/// Checks ordering, positivity and the inclusion criterion. Returns an empty
/// string for a valid record, otherwise the first violated rule.
std::string validate_record(const PatientRecord& record);

struct CycleSplit {
  int n_train_cycles = 0;
  double boundary_day = 0.0;  ///< start of cycle n_train_cycles + 1
  std::vector<Observation> train_obs;
  std::vector<Observation> test_obs;
};

struct Rejection {
  std::string patient_id;
  std::string reason;
};

struct IngestResult {
  std::vector<PatientRecord> records;  ///< sorted by patient id
  std::vector<Rejection> rejected;
};

/// Density threshold on mean observations per recorded cycle (>= means dense).
inline constexpr double kDefaultDensityThreshold = 3.0;

/// Reads the observations and schedule CSVs. Malformed rows raise ParseError
/// (with the line number); patients failing the inclusion criterion end up
/// in `rejected`.
IngestResult ingest_patients(const std::filesystem::path& obs_file,
                             const std::filesystem::path& schedule_file,
                             double density_threshold = kDefaultDensityThreshold);

void write_observations_csv(const std::vector<PatientRecord>& records,
                            const std::filesystem::path& path);
void write_schedules_csv(const std::vector<PatientRecord>& records,
                         const std::filesystem::path& path);

/// Reads a single schedule from a schedule CSV. Selects `patient_id` when
/// given, otherwise the first patient in the file.
TreatmentSchedule read_schedule_csv(const std::filesystem::path& path,
                                    const std::optional<std::string>& patient_id = std::nullopt);

PatientRecord log_transform(const PatientRecord& record);
PatientRecord exp_transform(const PatientRecord& record);

CycleSplit split_by_cycles(const PatientRecord& record, int n_train);

double mean_observations_per_cycle(const PatientRecord& record);
Group classify_group(int cycle_length, double mean_obs_per_cycle,
                     double density_threshold = kDefaultDensityThreshold);
Group classify_group(const PatientRecord& record,
                     double density_threshold = kDefaultDensityThreshold);

/// Observation mapped onto the integer day grid (nearest day).
struct DayValue {
  int day = 0;
  double value = 0.0;

  bool operator==(const DayValue&) const = default;
};

int nearest_day(double time);
std::vector<DayValue> to_day_values(const std::vector<Observation>& observations);

}  // namespace hemadyn
