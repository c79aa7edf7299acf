#include "hemadyn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <set>

#include "hemadyn/errors.hpp"
#include "hemadyn/mech_models.hpp"
#include "hemadyn/ode.hpp"
#include "text_util.hpp"

namespace hemadyn {

namespace {

std::filesystem::path or_default(const std::filesystem::path& p, const std::filesystem::path& fallback) {
  return p.empty() ? fallback : p;
}

std::filesystem::path fits_dir_of(const RunConfig& c) { return or_default(c.fits_dir, c.out_dir / "fits"); }

int jobs_of(const RunConfig& c) { return c.jobs > 0 ? c.jobs : default_jobs(); }

void require_file(const std::filesystem::path& p, const std::string& what, const std::string& hint) {
  if (!std::filesystem::is_regular_file(p))
    throw PreconditionError(what + " '" + p.string() + "' not found (" + hint + ")");
}

std::vector<PatientRecord> load_records(const RunConfig& c, std::ostream& log) {
  const auto obs = or_default(c.observations, c.out_dir / "observations.csv");
  const auto sched = or_default(c.schedules, c.out_dir / "schedules.csv");
  require_file(obs, "observations file", "run `cohort` first or pass --observations");
  require_file(sched, "schedule file", "run `cohort` first or pass --schedules");
  auto ingested = ingest_patients(obs, sched, c.density_threshold);
  for (const auto& r : ingested.rejected) log << "rejected " << r.patient_id << ": " << r.reason << '\n';
  if (ingested.records.empty()) throw PreconditionError("no eligible patients in '" + obs.string() + "'");
  return std::move(ingested.records);
}

/// Serializes progress lines from worker threads.
class SyncLog {
 public:
  explicit SyncLog(std::ostream& out) : out_(out) {}
  void line(const std::string& text) {
    std::lock_guard lock(mutex_);
    out_ << text << '\n' << std::flush;
  }

 private:
  std::ostream& out_;
  std::mutex mutex_;
};

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::string fit_label(std::string_view id, ModelId m, int n) {
  return std::string(id) + "/" + std::string(to_string(m)) + "/n_train=" + std::to_string(n);
}

void remove_quietly(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::remove(p, ec);
}

}  // namespace

void apply_run_config(const Json& j, RunConfig& c) {
  if (!j.is_object()) throw PreconditionError("run config must be a JSON object");
  static const std::set<std::string> known{"observations", "schedules", "schedule", "params", "fit",      "model",
                                           "days",         "models",    "n_train",  "seed",   "out_dir",  "fits_dir",
                                           "jobs",         "alpha",     "density_threshold",  "hp",       "cohort"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw PreconditionError("unknown key '" + key + "' in run config");
  try {
    auto path = [&](const char* key, std::filesystem::path& field) {
      if (j.contains(key)) field = j.at(key).get<std::string>();
    };
    path("observations", c.observations);
    path("schedules", c.schedules);
    path("schedule", c.schedule);
    path("params", c.params);
    path("fit", c.fit);
    path("out_dir", c.out_dir);
    path("fits_dir", c.fits_dir);
    if (j.contains("model")) c.model = j.at("model").get<std::string>();
    if (j.contains("days")) c.days = j.at("days").get<int>();
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& m : j.at("models")) c.models.push_back(model_id_from_string(m.get<std::string>()));
    }
    if (j.contains("n_train")) c.n_train = j.at("n_train").get<std::vector<int>>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("density_threshold")) c.density_threshold = j.at("density_threshold").get<double>();
  } catch (const Json::exception& e) {
    throw PreconditionError(std::string("run config: ") + e.what());
  }
  if (j.contains("hp")) from_json(j.at("hp"), c.hp);
  if (j.contains("cohort")) from_json(j.at("cohort"), c.cohort);
  for (int n : c.n_train)
    if (n < 1 || n > 5) throw PreconditionError("n_train values must lie in [1, 5]");
}

std::uint64_t resolve_seed(const RunConfig& c) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("HEMADYN_SEED"); env && *env) {
    const auto v = detail::parse_int(env);
    if (!v || *v < 0) throw PreconditionError(std::string("HEMADYN_SEED is not a non-negative integer: ") + env);
    return static_cast<std::uint64_t>(*v);
  }
  throw PreconditionError("a seed is required (pass --seed, set \"seed\" in the config or HEMADYN_SEED)");
}

std::string config_hash(const RunConfig& c) {
  Json j;
  j["models"] = Json::array();
  for (ModelId m : c.models) j["models"].push_back(to_string(m));
  j["n_train"] = c.n_train;
  j["hp"] = c.hp;
  j["alpha"] = c.alpha;
  j["density_threshold"] = c.density_threshold;
  return hex64(fnv1a64(j.dump()));
}

std::filesystem::path fit_path(const std::filesystem::path& fits_dir, std::string_view id, ModelId m, int n) {
  return fits_dir / std::string(id) / (std::string(to_string(m)) + "_n" + std::to_string(n) + ".json");
}

std::filesystem::path failure_path(const std::filesystem::path& fits_dir, std::string_view id, ModelId m, int n) {
  return fits_dir / std::string(id) / (std::string(to_string(m)) + "_n" + std::to_string(n) + ".failed.json");
}

std::vector<int> usable_splits(const PatientRecord& record, const std::vector<int>& requested) {
  std::vector<int> out;
  for (int n : requested) {
    if (n < 1 || n >= record.schedule.n_cycles()) continue;
    if (split_by_cycles(record, n).test_obs.empty()) continue;
    out.push_back(n);
  }
  return out;
}

// ---- simulate ----------------------------------------------------------------

void cmd_simulate(const RunConfig& c, std::ostream& log) {
  if (c.schedule.empty()) throw PreconditionError("simulate needs --schedule");
  require_file(c.schedule, "schedule file", "pass --schedule");
  if (c.days < 1) throw PreconditionError("simulate needs --days >= 1");
  const auto schedule = read_schedule_csv(c.schedule);
  std::error_code ec;
  std::filesystem::create_directories(c.out_dir, ec);
  const auto out = c.out_dir / "trajectory.csv";

  if (!c.fit.empty()) {
    require_file(c.fit, "fit file", "pass a FitResult JSON written by `fit`");
    const auto fit = load_fit(c.fit);
    if (const auto* m = std::get_if<MechFit>(&fit.parameters)) {
      SimulationOptions opt;
      opt.initial_state = steady_state(m->params, m->initial_level);
      write_trajectory_csv(simulate(m->params, schedule, c.days, opt), out);
    } else if (const auto* u = std::get_if<UdeFit>(&fit.parameters)) {
      write_trajectory_csv(simulate_ude(u->model, schedule, c.days), out);
    } else {
      const auto pred = predict_daily(fit, schedule, 0, c.days);
      auto f = detail::open_output(out.string());
      f << "day,platelets\n";
      for (int d = 0; d <= c.days; ++d) f << d << ',' << format_double(std::exp(pred.at(d))) << '\n';
      if (!f) throw Error("write failed for '" + out.string() + "'");
    }
    log << "wrote " << out.string() << " (" << to_string(fit.model) << ", " << c.days + 1 << " days)\n";
    return;
  }

  const ModelId id = model_id_from_string(c.model);
  if (!is_mechanistic(id)) throw PreconditionError("model '" + c.model + "' can only be simulated from a fit (--fit)");
  const MechModel mm = mech_model_of(id);
  const MechParams p = c.params.empty() ? MechParams::population(mm) : load_mech_params(c.params, mm);
  write_trajectory_csv(simulate(p, schedule, c.days), out);
  log << "wrote " << out.string() << " (" << c.model << ", " << c.days + 1 << " days)\n";
}

// ---- cohort ------------------------------------------------------------------

void cmd_cohort(const RunConfig& c, std::ostream& log) {
  VirtualCohortSpec spec = c.cohort;
  spec.seed = resolve_seed(c);
  const auto cohort = generate_virtual_cohort(spec);
  std::error_code ec;
  std::filesystem::create_directories(c.out_dir, ec);
  if (ec) throw Error("cannot create '" + c.out_dir.string() + "': " + ec.message());
  std::vector<PatientRecord> records;
  Json truth = Json::array();
  for (const auto& vp : cohort) {
    records.push_back(vp.record);
    truth.push_back(Json{{"patient_id", vp.record.id},
                         {"group", to_string(vp.record.group)},
                         {"toxicity_growth", vp.toxicity_growth},
                         {"params", vp.truth}});
  }
  write_observations_csv(records, c.out_dir / "observations.csv");
  write_schedules_csv(records, c.out_dir / "schedules.csv");
  write_json_file(Json{{"spec", spec}, {"patients", truth}}, c.out_dir / "truth.json");
  log << "wrote " << records.size() << " virtual patients to " << c.out_dir.string() << '\n';
}

// ---- fit ---------------------------------------------------------------------

void cmd_fit(const RunConfig& c, std::ostream& log) {
  const auto records = load_records(c, log);
  const std::uint64_t master = resolve_seed(c);
  const auto dir = fits_dir_of(c);
  if (c.models.empty()) throw PreconditionError("no models selected");
  bool needs_friberg = false;
  for (ModelId m : c.models) needs_friberg = needs_friberg || !is_mechanistic(m);

  SyncLog sync(log);
  const auto failures = parallel_map(records.size(), jobs_of(c), [&](std::size_t i) {
    const auto& rec = records[i];
    std::vector<std::string> failed;
    std::error_code ec;
    std::filesystem::create_directories(dir / rec.id, ec);
    if (ec) throw Error("cannot create '" + (dir / rec.id).string() + "': " + ec.message());
    for (int n : usable_splits(rec, c.n_train)) {
      const auto split = split_by_cycles(rec, n);
      std::optional<FitResult> friberg;
      std::string friberg_error;
      auto record_failure = [&](ModelId m, const std::string& what) {
        write_json_file(Json{{"patient_id", rec.id}, {"model", to_string(m)}, {"n_train", n}, {"error", what}},
                        failure_path(dir, rec.id, m, n));
        remove_quietly(fit_path(dir, rec.id, m, n));
        failed.push_back(fit_label(rec.id, m, n) + ": " + what);
      };
      if (needs_friberg || std::find(c.models.begin(), c.models.end(), ModelId::Friberg) != c.models.end()) {
        try {
          friberg = fit_mechanistic(ModelId::Friberg, rec, split, c.hp.mech);
        } catch (const Error& e) {
          friberg_error = e.what();
        }
      }
      for (ModelId m : c.models) {
        try {
          FitResult fit;
          if (m == ModelId::Friberg) {
            if (!friberg) throw Error(friberg_error);
            fit = *friberg;
          } else if (is_mechanistic(m)) {
            fit = fit_mechanistic(m, rec, split, c.hp.mech);
          } else {
            if (!friberg) throw Error("Friberg fit failed: " + friberg_error);
            fit = fit_model(m, rec, split, c.hp, fit_seed(master, rec.id, m, n), &*friberg);
          }
          save_fit(fit, fit_path(dir, rec.id, m, n));
          remove_quietly(failure_path(dir, rec.id, m, n));
        } catch (const Error& e) {
          record_failure(m, e.what());
        }
      }
      sync.line("fitted " + rec.id + " n_train=" + std::to_string(n));
    }
    return failed;
  });

  std::vector<std::string> all;
  for (const auto& f : failures) all.insert(all.end(), f.begin(), f.end());
  if (!all.empty()) {
    std::string msg = std::to_string(all.size()) + " fit(s) failed:";
    for (const auto& f : all) msg += "\n  " + f;
    throw Error(msg);
  }
  log << "fits written to " << dir.string() << '\n';
}

// ---- evaluate ----------------------------------------------------------------

EvalReport cmd_evaluate(const RunConfig& c, std::ostream& log) {
  const auto records = load_records(c, log);
  const auto dir = fits_dir_of(c);
  if (c.models.empty()) throw PreconditionError("no models selected");

  struct PatientResult {
    std::vector<ScoreEntry> scores;
    std::vector<std::string> failed, missing;
  };
  const auto results = parallel_map(records.size(), jobs_of(c), [&](std::size_t i) {
    const auto& rec = records[i];
    PatientResult r;
    for (int n : usable_splits(rec, c.n_train)) {
      const auto split = split_by_cycles(rec, n);
      for (ModelId m : c.models) {
        const auto path = fit_path(dir, rec.id, m, n);
        if (!std::filesystem::is_regular_file(path)) {
          if (std::filesystem::is_regular_file(failure_path(dir, rec.id, m, n)))
            r.failed.push_back(fit_label(rec.id, m, n) + ": training failed");
          else
            r.missing.push_back("(" + rec.id + ", " + std::string(to_string(m)) + ", n_train=" + std::to_string(n) + ")");
          continue;
        }
        const auto fit = load_fit(path);
        if (fit.model != m || fit.patient_id != rec.id || fit.n_train != n)
          throw PreconditionError(path.string() + " does not belong to " + fit_label(rec.id, m, n));
        try {
          r.scores.push_back({rec.id, rec.group, m, n, test_smse(fit, rec, split)});
        } catch (const PreconditionError&) {
          throw;
        } catch (const Error& e) {
          r.failed.push_back(fit_label(rec.id, m, n) + ": prediction failed: " + e.what());
        }
      }
    }
    return r;
  });

  std::vector<ScoreEntry> scores;
  std::vector<std::string> failed, missing;
  for (const auto& r : results) {
    scores.insert(scores.end(), r.scores.begin(), r.scores.end());
    failed.insert(failed.end(), r.failed.begin(), r.failed.end());
    missing.insert(missing.end(), r.missing.begin(), r.missing.end());
  }
  if (!missing.empty()) {
    std::string msg = "missing fits in '" + dir.string() + "' for " + std::to_string(missing.size()) +
                      " (patient, model) pair(s); run `fit` first:";
    for (std::size_t i = 0; i < missing.size() && i < 50; ++i) msg += "\n  " + missing[i];
    if (missing.size() > 50) msg += "\n  ...";
    throw PreconditionError(msg);
  }

  auto report = aggregate(scores, c.models, c.n_train, {Group::De14, Group::De21, Group::Sp14, Group::Sp21}, c.alpha);
  report.seed = c.seed.value_or(0);
  if (!c.seed) {
    try {
      report.seed = resolve_seed(c);
    } catch (const PreconditionError&) {
    }
  }
  report.config_hash = config_hash(c);
  report.failed_fits = failed;
  emit_report(report, c.out_dir / "report");
  for (const auto& f : failed) log << "excluded " << f << '\n';
  log << "report written to " << (c.out_dir / "report").string() << " (" << scores.size() << " scores)\n";
  return report;
}

}  // namespace hemadyn
