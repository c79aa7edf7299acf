#include "hemadyn/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "hemadyn/errors.hpp"
#include "text_util.hpp"

namespace hemadyn {

TreatmentSchedule::TreatmentSchedule(std::vector<DoseEvent> events, std::vector<int> cycle_starts,
                                     int cycle_length)
    : cycle_starts_(std::move(cycle_starts)), cycle_length_(cycle_length) {
  if (cycle_length_ <= 0) throw PreconditionError("cycle length must be positive");
  for (std::size_t i = 1; i < cycle_starts_.size(); ++i) {
    if (cycle_starts_[i] <= cycle_starts_[i - 1])
      throw PreconditionError("cycle starts must be strictly increasing");
  }
  std::map<int, double> merged;
  for (const auto& ev : events) {
    if (!(ev.relative_dose >= 0.0) || !std::isfinite(ev.relative_dose))
      throw PreconditionError("relative dose must be finite and non-negative (day " +
                              std::to_string(ev.day) + ")");
    if (!cycle_starts_.empty() && ev.day < cycle_starts_.front())
      throw PreconditionError("treatment event on day " + std::to_string(ev.day) +
                              " precedes the first cycle start");
    merged[ev.day] += ev.relative_dose;
  }
  for (const auto& [day, dose] : merged) {
    if (dose > 0.0) events_.push_back({day, dose});
  }
}

TreatmentSchedule TreatmentSchedule::regular(int n_cycles, int cycle_length, int treatment_days,
                                             double relative_dose) {
  std::vector<DoseEvent> events;
  std::vector<int> starts;
  for (int c = 0; c < n_cycles; ++c) {
    const int start = c * cycle_length;
    starts.push_back(start);
    for (int d = 0; d < treatment_days; ++d) events.push_back({start + d, relative_dose});
  }
  return TreatmentSchedule(std::move(events), std::move(starts), cycle_length);
}

double TreatmentSchedule::relative_dose(int day) const {
  auto it = std::lower_bound(events_.begin(), events_.end(), day,
                             [](const DoseEvent& ev, int d) { return ev.day < d; });
  return (it != events_.end() && it->day == day) ? it->relative_dose : 0.0;
}

std::optional<int> TreatmentSchedule::first_event_day() const {
  if (events_.empty()) return std::nullopt;
  return events_.front().day;
}

std::optional<int> TreatmentSchedule::last_event_day() const {
  if (events_.empty()) return std::nullopt;
  return events_.back().day;
}

int TreatmentSchedule::calendar_end() const {
  if (cycle_starts_.empty()) return last_event_day().value_or(0);
  return cycle_starts_.back() + cycle_length_;
}

int TreatmentSchedule::cycle_index(double time) const {
  int idx = -1;
  for (std::size_t i = 0; i < cycle_starts_.size(); ++i) {
    if (time >= cycle_starts_[i]) idx = static_cast<int>(i);
  }
  return idx;
}

std::string_view to_string(Group group) {
  switch (group) {
    case Group::De14: return "De14";
    case Group::De21: return "De21";
    case Group::Sp14: return "Sp14";
    case Group::Sp21: return "Sp21";
  }
  return "?";
}

Group group_from_string(std::string_view name) {
  for (Group g : {Group::De14, Group::De21, Group::Sp14, Group::Sp21}) {
    if (to_string(g) == name) return g;
  }
  throw PreconditionError("unknown group '" + std::string(name) + "'");
}

namespace {

int cycles_with_multiple_observations(const PatientRecord& record) {
  std::vector<int> per_cycle(record.schedule.n_cycles(), 0);
  for (const auto& obs : record.observations) {
    const int c = record.schedule.cycle_index(obs.time);
    if (c >= 0) ++per_cycle[c];
  }
  return static_cast<int>(std::count_if(per_cycle.begin(), per_cycle.end(), [](int n) { return n > 1; }));
}

}  // namespace

std::string validate_record(const PatientRecord& record) {
  const auto& sched = record.schedule;
  if (sched.n_cycles() == 0) return "no cycle boundaries";
  if (sched.cycle_length() != 14 && sched.cycle_length() != 21)
    return "cycle length " + std::to_string(sched.cycle_length()) + " is neither 14 nor 21";
  for (std::size_t i = 0; i < record.observations.size(); ++i) {
    const auto& obs = record.observations[i];
    if (!std::isfinite(obs.time) || obs.time < 0.0) return "negative or non-finite observation time";
    if (!std::isfinite(obs.platelet_count)) return "non-finite count";
    if (record.scale == CountScale::Linear && obs.platelet_count <= 0.0) return "non-positive count";
    if (i > 0 && obs.time <= record.observations[i - 1].time)
      return "observations not strictly increasing in time";
  }
  const int observed = cycles_with_multiple_observations(record);
  if (observed < kMinObservedCycles)
    return "only " + std::to_string(observed) + " cycles with more than one observation (need " +
           std::to_string(kMinObservedCycles) + ")";
  return {};
}

namespace {

constexpr std::string_view kObsHeader = "patient_id,time_days,platelet_count_per_l";
constexpr std::string_view kScheduleHeader = "patient_id,day,relative_dose,cycle_start";

struct ScheduleRows {
  std::vector<DoseEvent> events;
  std::set<int> cycle_starts;
};

std::map<std::string, ScheduleRows> read_schedule_rows(const std::filesystem::path& path) {
  auto in = detail::open_input(path.string());
  std::map<std::string, ScheduleRows> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    if (header) {
      if (text != kScheduleHeader)
        throw ParseError(path.string(), lineno, "expected header '" + std::string(kScheduleHeader) + "'");
      header = false;
      continue;
    }
    const auto fields = detail::split(text);
    if (fields.size() != 4) throw ParseError(path.string(), lineno, "expected 4 fields");
    if (fields[0].empty()) throw ParseError(path.string(), lineno, "empty patient_id");
    const auto day = detail::parse_int(fields[1]);
    const auto dose = detail::parse_double(fields[2]);
    const auto start = detail::parse_int(fields[3]);
    if (!day) throw ParseError(path.string(), lineno, "day is not an integer");
    if (!dose || !std::isfinite(*dose)) throw ParseError(path.string(), lineno, "relative_dose is not a number");
    if (*dose < 0.0) throw ParseError(path.string(), lineno, "negative relative_dose");
    if (!start || (*start != 0 && *start != 1)) throw ParseError(path.string(), lineno, "cycle_start must be 0 or 1");
    auto& r = rows[std::string(fields[0])];
    r.events.push_back({static_cast<int>(*day), *dose});
    if (*start == 1) r.cycle_starts.insert(static_cast<int>(*day));
  }
  if (header) throw ParseError(path.string(), lineno, "missing header");
  return rows;
}

/// Infers the uniform cycle length; returns an error message on failure.
std::string build_schedule(const ScheduleRows& rows, TreatmentSchedule& out) {
  std::vector<int> starts(rows.cycle_starts.begin(), rows.cycle_starts.end());
  if (starts.empty()) return "no cycle boundaries in schedule";
  int length = 0;
  if (starts.size() < 2) return "cycle length cannot be inferred from a single cycle start";
  length = starts[1] - starts[0];
  for (std::size_t i = 2; i < starts.size(); ++i) {
    if (starts[i] - starts[i - 1] != length) return "non-uniform cycle length";
  }
  if (length != 14 && length != 21) return "cycle length " + std::to_string(length) + " is neither 14 nor 21";
  try {
    out = TreatmentSchedule(rows.events, std::move(starts), length);
  } catch (const PreconditionError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TreatmentSchedule read_schedule_csv(const std::filesystem::path& path,
                                    const std::optional<std::string>& patient_id) {
  const auto rows = read_schedule_rows(path);
  if (rows.empty()) throw Error("schedule file '" + path.string() + "' contains no rows");
  auto it = patient_id ? rows.find(*patient_id) : rows.begin();
  if (it == rows.end()) throw Error("patient '" + *patient_id + "' not found in " + path.string());
  std::vector<int> starts(it->second.cycle_starts.begin(), it->second.cycle_starts.end());
  if (starts.empty()) throw Error("schedule for '" + it->first + "' has no cycle boundaries");
  int length = starts.size() >= 2 ? starts[1] - starts[0] : 21;
  for (std::size_t i = 2; i < starts.size(); ++i) {
    if (starts[i] - starts[i - 1] != length) throw Error("non-uniform cycle length in " + path.string());
  }
  return TreatmentSchedule(it->second.events, std::move(starts), length);
}

IngestResult ingest_patients(const std::filesystem::path& obs_file,
                             const std::filesystem::path& schedule_file, double density_threshold) {
  auto in = detail::open_input(obs_file.string());
  std::map<std::string, std::vector<Observation>> obs_by_id;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    if (header) {
      if (text != kObsHeader)
        throw ParseError(obs_file.string(), lineno, "expected header '" + std::string(kObsHeader) + "'");
      header = false;
      continue;
    }
    const auto fields = detail::split(text);
    if (fields.size() != 3) throw ParseError(obs_file.string(), lineno, "expected 3 fields");
    if (fields[0].empty()) throw ParseError(obs_file.string(), lineno, "empty patient_id");
    const auto time = detail::parse_double(fields[1]);
    const auto count = detail::parse_double(fields[2]);
    if (!time || !std::isfinite(*time)) throw ParseError(obs_file.string(), lineno, "time_days is not a number");
    if (*time < 0.0) throw ParseError(obs_file.string(), lineno, "negative time");
    if (!count || !std::isfinite(*count)) throw ParseError(obs_file.string(), lineno, "platelet count is not a number");
    if (*count <= 0.0) throw ParseError(obs_file.string(), lineno, "non-positive count");
    obs_by_id[std::string(fields[0])].push_back({*time, *count});
  }
  if (header) throw ParseError(obs_file.string(), lineno, "missing header");

  const auto schedules = read_schedule_rows(schedule_file);

  IngestResult result;
  for (auto& [id, observations] : obs_by_id) {
    std::stable_sort(observations.begin(), observations.end(),
                     [](const Observation& a, const Observation& b) { return a.time < b.time; });
    auto sched_it = schedules.find(id);
    if (sched_it == schedules.end()) {
      result.rejected.push_back({id, "missing schedule (cycle boundaries)"});
      continue;
    }
    PatientRecord record;
    record.id = id;
    record.observations = std::move(observations);
    if (auto err = build_schedule(sched_it->second, record.schedule); !err.empty()) {
      result.rejected.push_back({id, err});
      continue;
    }
    if (auto err = validate_record(record); !err.empty()) {
      result.rejected.push_back({id, err});
      continue;
    }
    record.group = classify_group(record, density_threshold);
    result.records.push_back(std::move(record));
  }
  for (const auto& [id, rows] : schedules) {
    if (!obs_by_id.contains(id)) result.rejected.push_back({id, "schedule without observations"});
  }
  return result;
}

void write_observations_csv(const std::vector<PatientRecord>& records, const std::filesystem::path& path) {
  auto out = detail::open_output(path.string());
  out << kObsHeader << '\n';
  for (const auto& rec : records) {
    if (rec.scale != CountScale::Linear) throw PreconditionError("observations CSV stores linear counts");
    for (const auto& obs : rec.observations) {
      out << rec.id << ',' << detail::format_double(obs.time) << ','
          << detail::format_double(obs.platelet_count) << '\n';
    }
  }
  if (!out) throw Error("write failed: " + path.string());
}

void write_schedules_csv(const std::vector<PatientRecord>& records, const std::filesystem::path& path) {
  auto out = detail::open_output(path.string());
  out << kScheduleHeader << '\n';
  for (const auto& rec : records) {
    std::map<int, std::pair<double, bool>> rows;
    for (const auto& ev : rec.schedule.events()) rows[ev.day].first += ev.relative_dose;
    for (int s : rec.schedule.cycle_starts()) rows[s].second = true;
    for (const auto& [day, row] : rows) {
      out << rec.id << ',' << day << ',' << detail::format_double(row.first) << ','
          << (row.second ? 1 : 0) << '\n';
    }
  }
  if (!out) throw Error("write failed: " + path.string());
}

PatientRecord log_transform(const PatientRecord& record) {
  if (record.scale != CountScale::Linear) throw PreconditionError("record is already log-transformed");
  PatientRecord out = record;
  for (auto& obs : out.observations) {
    if (!(obs.platelet_count > 0.0)) throw PreconditionError("log transform of non-positive count");
    obs.platelet_count = std::log(obs.platelet_count);
  }
  out.scale = CountScale::Log;
  return out;
}

PatientRecord exp_transform(const PatientRecord& record) {
  if (record.scale != CountScale::Log) throw PreconditionError("record is not log-transformed");
  PatientRecord out = record;
  for (auto& obs : out.observations) obs.platelet_count = std::exp(obs.platelet_count);
  out.scale = CountScale::Linear;
  return out;
}

CycleSplit split_by_cycles(const PatientRecord& record, int n_train) {
  const int n_cycles = record.schedule.n_cycles();
  if (n_train < 1 || n_train >= n_cycles)
    throw PreconditionError("n_train=" + std::to_string(n_train) + " must be in [1, " +
                            std::to_string(n_cycles - 1) + "] for a record with " +
                            std::to_string(n_cycles) + " cycles");
  CycleSplit split;
  split.n_train_cycles = n_train;
  split.boundary_day = record.schedule.cycle_starts()[n_train];
  for (const auto& obs : record.observations) {
    (obs.time < split.boundary_day ? split.train_obs : split.test_obs).push_back(obs);
  }
  if (split.test_obs.empty())
    throw PreconditionError("no observations after cycle " + std::to_string(n_train) + " (nothing to predict)");
  return split;
}

double mean_observations_per_cycle(const PatientRecord& record) {
  const int n = record.schedule.n_cycles();
  if (n == 0) return 0.0;
  const auto in_cycles = std::count_if(record.observations.begin(), record.observations.end(),
                                       [&](const Observation& o) { return record.schedule.cycle_index(o.time) >= 0; });
  return static_cast<double>(in_cycles) / n;
}

Group classify_group(int cycle_length, double mean_obs_per_cycle, double density_threshold) {
  const bool dense = mean_obs_per_cycle >= density_threshold;
  const bool d14 = cycle_length == 14;
  if (dense) return d14 ? Group::De14 : Group::De21;
  return d14 ? Group::Sp14 : Group::Sp21;
}

Group classify_group(const PatientRecord& record, double density_threshold) {
  return classify_group(record.schedule.cycle_length(), mean_observations_per_cycle(record), density_threshold);
}

int nearest_day(double time) { return static_cast<int>(std::lround(time)); }

std::vector<DayValue> to_day_values(const std::vector<Observation>& observations) {
  std::vector<DayValue> out;
  out.reserve(observations.size());
  for (const auto& obs : observations) out.push_back({nearest_day(obs.time), obs.platelet_count});
  return out;
}

}  // namespace hemadyn
