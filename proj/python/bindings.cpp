#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "hemadyn/cli.hpp"
#include "hemadyn/errors.hpp"
#include "hemadyn/eval.hpp"
#include "hemadyn/mech_models.hpp"
#include "hemadyn/objectives.hpp"
#include "hemadyn/pipelines.hpp"
#include "hemadyn/serialization.hpp"

namespace py = pybind11;
using namespace hemadyn;

// Structured values cross the boundary as JSON text; the Python package
// converts them to and from dicts.

namespace {

MechParams params_from(const std::string& model, const std::string& params_json) {
  const MechModel m = mech_model_from_string(model);
  MechParams p = MechParams::population(m);
  if (!params_json.empty()) from_json(Json::parse(params_json), p);
  if (p.model != m) throw PreconditionError("parameter model does not match '" + model + "'");
  p.validate();
  return p;
}

TreatmentSchedule schedule_from(const std::vector<std::pair<int, double>>& events, const std::vector<int>& cycle_starts,
                                int cycle_length) {
  std::vector<DoseEvent> ev;
  for (const auto& [day, dose] : events) ev.push_back({day, dose});
  return TreatmentSchedule(std::move(ev), cycle_starts, cycle_length);
}

PatientRecord record_from(const std::string& id, const std::vector<std::pair<double, double>>& observations,
                          const TreatmentSchedule& schedule) {
  PatientRecord r;
  r.id = id;
  for (const auto& [t, c] : observations) r.observations.push_back({t, c});
  r.schedule = schedule;
  r.group = classify_group(r);
  if (auto why = validate_record(r); !why.empty()) throw PreconditionError("patient " + id + ": " + why);
  return r;
}

py::tuple series_tuple(const DailySeries& s) { return py::make_tuple(s.first_day, s.values); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Platelet dynamics under chemotherapy: mechanistic, hybrid and recurrent models";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<IntegrationError>(m, "IntegrationError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<TreatmentSchedule>(m, "Schedule")
      .def(py::init(&schedule_from), py::arg("events"), py::arg("cycle_starts"), py::arg("cycle_length"))
      .def_static("regular", &TreatmentSchedule::regular, py::arg("n_cycles"), py::arg("cycle_length"),
                  py::arg("treatment_days") = 1, py::arg("relative_dose") = 1.0)
      .def_property_readonly("events",
                             [](const TreatmentSchedule& s) {
                               std::vector<std::pair<int, double>> out;
                               for (const auto& e : s.events()) out.emplace_back(e.day, e.relative_dose);
                               return out;
                             })
      .def_property_readonly("cycle_starts", &TreatmentSchedule::cycle_starts)
      .def_property_readonly("cycle_length", &TreatmentSchedule::cycle_length)
      .def("relative_dose", &TreatmentSchedule::relative_dose)
      .def("__eq__", [](const TreatmentSchedule& a, const TreatmentSchedule& b) { return a == b; });

  m.def("model_ids", [] {
    std::vector<std::string> out;
    for (ModelId id : all_model_ids()) out.emplace_back(to_string(id));
    return out;
  });

  m.def("population_params", [](const std::string& model) {
    return Json(MechParams::population(mech_model_from_string(model))).dump();
  });

  m.def("compartment_names", [](const std::string& model) { return compartment_names(mech_model_from_string(model)); });

  m.def(
      "steady_state",
      [](const std::string& model, const std::string& params_json) {
        return steady_state(params_from(model, params_json));
      },
      py::arg("model"), py::arg("params_json") = "");

  m.def(
      "simulate",
      [](const std::string& model, const std::string& params_json, const TreatmentSchedule& schedule, int horizon,
         std::optional<std::vector<double>> initial_state) {
        SimulationOptions opt;
        opt.initial_state = std::move(initial_state);
        const Trajectory tr = simulate(params_from(model, params_json), schedule, horizon, opt);
        return py::make_tuple(tr.days(), tr.dimension, tr.states);
      },
      py::arg("model"), py::arg("params_json"), py::arg("schedule"), py::arg("horizon"),
      py::arg("initial_state") = py::none());

  m.def(
      "smse",
      [](const std::vector<std::pair<int, double>>& y, int first_day, std::vector<double> yhat, double w) {
        std::vector<DayValue> dv;
        for (const auto& [d, v] : y) dv.push_back({d, v});
        return smse(dv, DailySeries{first_day, std::move(yhat)}, SmseWeights{w});
      },
      py::arg("observations"), py::arg("first_day"), py::arg("predictions"), py::arg("neighbor_weight") = 0.3);

  m.def(
      "wilcoxon_one_sided",
      [](const std::vector<double>& best, const std::vector<double>& other) { return wilcoxon_one_sided(best, other); },
      py::arg("best"), py::arg("other"));

  m.def(
      "fit",
      [](const std::string& model, const std::string& patient_id,
         const std::vector<std::pair<double, double>>& observations, const TreatmentSchedule& schedule, int n_train,
         const std::string& config_json, std::uint64_t seed) {
        const PatientRecord rec = record_from(patient_id, observations, schedule);
        ModelConfigs cfg;
        if (!config_json.empty()) from_json(Json::parse(config_json), cfg);
        const ModelId id = model_id_from_string(model);
        py::gil_scoped_release release;
        const CycleSplit split = split_by_cycles(rec, n_train);
        std::optional<FitResult> friberg;
        if (!is_mechanistic(id))
          friberg = fit_model(ModelId::Friberg, rec, split, cfg, fit_seed(seed, patient_id, ModelId::Friberg, n_train));
        const FitResult fit =
            fit_model(id, rec, split, cfg, fit_seed(seed, patient_id, id, n_train), friberg ? &*friberg : nullptr);
        return Json(fit).dump();
      },
      py::arg("model"), py::arg("patient_id"), py::arg("observations"), py::arg("schedule"), py::arg("n_train"),
      py::arg("config_json") = "", py::arg("seed") = 0);

  m.def(
      "predict",
      [](const std::string& fit_json, const TreatmentSchedule& schedule, int start_day, int end_day) {
        FitResult fit;
        from_json(Json::parse(fit_json), fit);
        return series_tuple(predict_daily(fit, schedule, start_day, end_day));
      },
      py::arg("fit_json"), py::arg("schedule"), py::arg("start_day"), py::arg("end_day"));

  m.def(
      "test_smse",
      [](const std::string& fit_json, const std::string& patient_id,
         const std::vector<std::pair<double, double>>& observations, const TreatmentSchedule& schedule, int n_train,
         double w) {
        FitResult fit;
        from_json(Json::parse(fit_json), fit);
        const PatientRecord rec = record_from(patient_id, observations, schedule);
        return test_smse(fit, rec, split_by_cycles(rec, n_train), SmseWeights{w});
      },
      py::arg("fit_json"), py::arg("patient_id"), py::arg("observations"), py::arg("schedule"), py::arg("n_train"),
      py::arg("neighbor_weight") = 0.3);

  // The CLI subcommands, driven by a run.json-style object.
  auto run = [](const std::string& config_json, auto&& command) {
    RunConfig c;
    apply_run_config(Json::parse(config_json), c);
    std::ostringstream log;
    {
      py::gil_scoped_release release;
      command(c, log);
    }
    return log.str();
  };
  m.def("cmd_simulate", [run](const std::string& cfg) { return run(cfg, cmd_simulate); });
  m.def("cmd_cohort", [run](const std::string& cfg) { return run(cfg, cmd_cohort); });
  m.def("cmd_fit", [run](const std::string& cfg) { return run(cfg, cmd_fit); });
  m.def("cmd_evaluate", [run](const std::string& cfg) {
    return run(cfg, [](const RunConfig& c, std::ostream& log) { cmd_evaluate(c, log); });
  });
}
