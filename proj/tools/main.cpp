#include <iostream>

#include <CLI11.hpp>

#include "hemadyn/cli.hpp"
#include "hemadyn/errors.hpp"

using namespace hemadyn;

namespace {

struct Flags {
  std::string config;
  std::string observations, schedules, schedule, params, fit, out_dir, fits_dir, model;
  std::vector<std::string> models;
  std::vector<int> n_train;
  std::optional<std::uint64_t> seed;
  int days = 0;
  int jobs = 0;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "run.json; its keys override the flags")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out_dir, "output directory (default: out)");
  cmd->add_option("--seed", f.seed, "master seed (fallback: HEMADYN_SEED)");
  cmd->add_option("--jobs", f.jobs, "parallel patient workers (default: available cores)")->check(CLI::NonNegativeNumber);
}

void add_data(CLI::App* cmd, Flags& f) {
  cmd->add_option("--observations", f.observations, "observations CSV (default: <out>/observations.csv)");
  cmd->add_option("--schedules", f.schedules, "schedule CSV (default: <out>/schedules.csv)");
  cmd->add_option("--fits", f.fits_dir, "fit directory (default: <out>/fits)");
  cmd->add_option("--models", f.models, "model ids: friberg henrich ms ms-rev ude-add ude-rep arx-gru");
  cmd->add_option("--n-train", f.n_train, "training cycle counts in 1..5")->check(CLI::Range(1, 5));
}

RunConfig build(const Flags& f) {
  RunConfig c;
  if (!f.observations.empty()) c.observations = f.observations;
  if (!f.schedules.empty()) c.schedules = f.schedules;
  if (!f.schedule.empty()) c.schedule = f.schedule;
  if (!f.params.empty()) c.params = f.params;
  if (!f.fit.empty()) c.fit = f.fit;
  if (!f.out_dir.empty()) c.out_dir = f.out_dir;
  if (!f.fits_dir.empty()) c.fits_dir = f.fits_dir;
  if (!f.model.empty()) c.model = f.model;
  if (!f.models.empty()) {
    c.models.clear();
    for (const auto& m : f.models) c.models.push_back(model_id_from_string(m));
  }
  if (!f.n_train.empty()) c.n_train = f.n_train;
  c.seed = f.seed;
  c.days = f.days;
  c.jobs = f.jobs;
  if (!f.config.empty()) apply_run_config(read_json_file(f.config), c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Platelet dynamics under chemotherapy: simulation, fitting and evaluation"};
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "write a daily trajectory CSV");
  add_common(sim, f);
  sim->add_option("--model", f.model, "friberg, henrich, ms or ms-rev");
  sim->add_option("--schedule", f.schedule, "schedule CSV")->required();
  sim->add_option("--days", f.days, "horizon in days")->required();
  sim->add_option("--params", f.params, "parameter JSON (default: population values)");
  sim->add_option("--fit", f.fit, "simulate a fitted model instead");

  auto* cohort = app.add_subcommand("cohort", "generate a virtual patient cohort");
  add_common(cohort, f);

  auto* fit = app.add_subcommand("fit", "fit models per patient and training split");
  add_common(fit, f);
  add_data(fit, f);

  auto* eval = app.add_subcommand("evaluate", "score stored fits and write the report");
  add_common(eval, f);
  add_data(eval, f);

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = build(f);
    if (sim->parsed()) cmd_simulate(config, std::cout);
    if (cohort->parsed()) cmd_cohort(config, std::cout);
    if (fit->parsed()) cmd_fit(config, std::cout);
    if (eval->parsed()) cmd_evaluate(config, std::cout);
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
