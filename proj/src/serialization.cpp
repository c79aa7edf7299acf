#include "hemadyn/serialization.hpp"

#include <fstream>
#include <sstream>

#include "hemadyn/errors.hpp"
#include "text_util.hpp"

namespace hemadyn {

namespace {

void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view what) {
  if (!j.is_object()) throw PreconditionError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw PreconditionError("unknown key '" + key + "' in " + std::string(what));
  }
}

template <class T>
void read(const Json& j, const char* key, T& field) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_class_v<T> && !std::is_same_v<T, std::string> && !std::is_same_v<T, std::vector<int>>) {
      from_json(*it, field);  // partial update of nested configs
    } else {
      field = it->template get<T>();
    }
  } catch (const Json::exception& e) {
    throw PreconditionError("key '" + std::string(key) + "': " + e.what());
  }
}

template <class T, class Parse>
void read_enum(const Json& j, const char* key, T& field, Parse parse) {
  std::string name;
  read(j, key, name);
  if (!name.empty()) field = parse(name);
}

std::vector<double> read_vector(const Json& j, const char* key) {
  if (!j.contains(key)) throw PreconditionError(std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw PreconditionError("key '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace

// ---- parameters ------------------------------------------------------------

void to_json(Json& j, const FribergParams& p) {
  j = Json{{"gamma", p.gamma}, {"mtt_hours", p.mtt_hours}, {"c0", p.c0}, {"e_eff", p.e_eff}};
}

void from_json(const Json& j, FribergParams& p) {
  check_keys(j, {"gamma", "mtt_hours", "c0", "e_eff"}, "Friberg parameters");
  read(j, "gamma", p.gamma);
  read(j, "mtt_hours", p.mtt_hours);
  read(j, "c0", p.c0);
  read(j, "e_eff", p.e_eff);
}

void to_json(Json& j, const MechParams& p) {
  j = Json{{"model", to_string(p.model)}, {"gamma", p.core.gamma}, {"mtt_hours", p.core.mtt_hours},
           {"c0", p.core.c0},             {"e_eff", p.core.e_eff}, {"f_tr", p.f_tr},
           {"f_p", p.f_p},                {"k_cyc", p.k_cyc},      {"k_cyc2", p.k_cyc2}};
}

void from_json(const Json& j, MechParams& p) {
  check_keys(j, {"model", "gamma", "mtt_hours", "c0", "e_eff", "f_tr", "f_p", "k_cyc", "k_cyc2"}, "mechanistic parameters");
  read_enum(j, "model", p.model, mech_model_from_string);
  read(j, "gamma", p.core.gamma);
  read(j, "mtt_hours", p.core.mtt_hours);
  read(j, "c0", p.core.c0);
  read(j, "e_eff", p.core.e_eff);
  read(j, "f_tr", p.f_tr);
  read(j, "f_p", p.f_p);
  read(j, "k_cyc", p.k_cyc);
  read(j, "k_cyc2", p.k_cyc2);
}

// ---- networks --------------------------------------------------------------

void to_json(Json& j, const MlpSpec& s) {
  j = Json{{"layer_sizes", s.layer_sizes}, {"activation", to_string(s.activation)}, {"l2", s.l2}};
}

void from_json(const Json& j, MlpSpec& s) {
  check_keys(j, {"layer_sizes", "activation", "l2"}, "network spec");
  read(j, "layer_sizes", s.layer_sizes);
  read_enum(j, "activation", s.activation, activation_from_string);
  read(j, "l2", s.l2);
  s.validate();
}

void to_json(Json& j, const MlpNet& n) {
  j = Json{{"spec", n.spec()}, {"parameters", std::vector<double>(n.parameters().begin(), n.parameters().end())}};
}

void from_json(const Json& j, MlpNet& n) {
  check_keys(j, {"spec", "parameters"}, "network");
  MlpSpec spec;
  if (!j.contains("spec")) throw PreconditionError("missing key 'spec'");
  from_json(j.at("spec"), spec);
  n = MlpNet(spec, read_vector(j, "parameters"));
}

void to_json(Json& j, const UdeModel& m) {
  j = Json{{"variant", to_string(m.variant)}, {"base", m.base}, {"net", m.net}, {"a", m.a}};
}

void from_json(const Json& j, UdeModel& m) {
  check_keys(j, {"variant", "base", "net", "a"}, "UDE model");
  read_enum(j, "variant", m.variant, ude_variant_from_string);
  read(j, "base", m.base);
  if (j.contains("net")) from_json(j.at("net"), m.net);
  read(j, "a", m.a);
  m.validate();
}

void to_json(Json& j, const GruNet& n) {
  j = Json{{"hidden", n.hidden()}, {"parameters", std::vector<double>(n.parameters().begin(), n.parameters().end())}};
}

void from_json(const Json& j, GruNet& n) {
  check_keys(j, {"hidden", "parameters"}, "GRU network");
  int hidden = 0;
  read(j, "hidden", hidden);
  n = GruNet(hidden, read_vector(j, "parameters"));
}

// ---- configs ---------------------------------------------------------------

void to_json(Json& j, const LrSchedule& s) {
  j = Json{{"lr_start", s.lr_start},
           {"decay", s.decay},
           {"decay_step_length", s.decay_step_length},
           {"n_decay_steps", s.n_decay_steps}};
}

void from_json(const Json& j, LrSchedule& s) {
  check_keys(j, {"lr_start", "decay", "decay_step_length", "n_decay_steps"}, "learning-rate schedule");
  read(j, "lr_start", s.lr_start);
  read(j, "decay", s.decay);
  read(j, "decay_step_length", s.decay_step_length);
  read(j, "n_decay_steps", s.n_decay_steps);
}

void to_json(Json& j, const NelderMeadOptions& o) {
  j = Json{{"initial_step", o.initial_step},
           {"xtol", o.xtol},
           {"max_iterations", o.max_iterations},
           {"max_restarts", o.max_restarts}};
}

void from_json(const Json& j, NelderMeadOptions& o) {
  check_keys(j, {"initial_step", "xtol", "max_iterations", "max_restarts"}, "Nelder-Mead options");
  read(j, "initial_step", o.initial_step);
  read(j, "xtol", o.xtol);
  read(j, "max_iterations", o.max_iterations);
  read(j, "max_restarts", o.max_restarts);
}

void to_json(Json& j, const UdeLossConfig& c) {
  j = Json{{"l2", c.l2},
           {"couple_steady", c.couple_steady},
           {"smse_neighbor", c.smse_neighbor},
           {"warmup_days", c.warmup_days},
           {"param_scale", c.param_scale},
           {"reference", c.reference}};
}

void from_json(const Json& j, UdeLossConfig& c) {
  check_keys(j, {"l2", "couple_steady", "smse_neighbor", "warmup_days", "param_scale", "reference"}, "UDE loss config");
  read(j, "l2", c.l2);
  read(j, "couple_steady", c.couple_steady);
  read(j, "smse_neighbor", c.smse_neighbor);
  read(j, "warmup_days", c.warmup_days);
  read(j, "param_scale", c.param_scale);
  read(j, "reference", c.reference);
}

void to_json(Json& j, const ArxConfig& c) {
  j = Json{{"hidden", c.hidden},
           {"l2", c.l2},
           {"baseline_penalty", c.baseline_penalty},
           {"baseline_all_days", c.baseline_all_days},
           {"smse_neighbor", c.smse_neighbor},
           {"warmup_days", c.warmup_days},
           {"scale", c.scale},
           {"schedule", c.schedule}};
}

void from_json(const Json& j, ArxConfig& c) {
  check_keys(j, {"hidden", "l2", "baseline_penalty", "baseline_all_days", "smse_neighbor", "warmup_days", "scale", "schedule"},
             "ARX config");
  read(j, "hidden", c.hidden);
  read(j, "l2", c.l2);
  read(j, "baseline_penalty", c.baseline_penalty);
  read(j, "baseline_all_days", c.baseline_all_days);
  read(j, "smse_neighbor", c.smse_neighbor);
  read(j, "warmup_days", c.warmup_days);
  read(j, "scale", c.scale);
  read(j, "schedule", c.schedule);
  c.validate();
}

void to_json(Json& j, const MechFitConfig& c) {
  j = Json{{"sigma", c.sigma},
           {"use_smse", c.use_smse},
           {"optimizer", c.optimizer},
           {"max_rounds", c.max_rounds},
           {"initial", to_string(c.initial)}};
}

void from_json(const Json& j, MechFitConfig& c) {
  check_keys(j, {"sigma", "use_smse", "optimizer", "max_rounds", "initial"}, "mechanistic fit config");
  read(j, "sigma", c.sigma);
  read(j, "use_smse", c.use_smse);
  read(j, "optimizer", c.optimizer);
  read(j, "max_rounds", c.max_rounds);
  read_enum(j, "initial", c.initial, initial_condition_from_string);
  if (!(c.sigma > 0.0)) throw PreconditionError("sigma must be positive");
  if (c.max_rounds < 1) throw PreconditionError("max_rounds must be >= 1");
}

void to_json(Json& j, const UdeTrainConfig& c) {
  j = Json{{"spec", c.spec},
           {"loss", c.loss},
           {"schedule", c.schedule},
           {"epochs", c.epochs},
           {"a", c.a},
           {"skip_pretraining", c.skip_pretraining},
           {"pretrain_regression_epochs", c.pretrain_regression_epochs},
           {"pretrain_trajectory_epochs", c.pretrain_trajectory_epochs},
           {"pretrain_lr", c.pretrain_lr}};
}

void from_json(const Json& j, UdeTrainConfig& c) {
  check_keys(j,
             {"spec", "loss", "schedule", "epochs", "a", "skip_pretraining", "pretrain_regression_epochs",
              "pretrain_trajectory_epochs", "pretrain_lr"},
             "UDE training config");
  read(j, "spec", c.spec);
  read(j, "loss", c.loss);
  read(j, "schedule", c.schedule);
  read(j, "epochs", c.epochs);
  read(j, "a", c.a);
  read(j, "skip_pretraining", c.skip_pretraining);
  read(j, "pretrain_regression_epochs", c.pretrain_regression_epochs);
  read(j, "pretrain_trajectory_epochs", c.pretrain_trajectory_epochs);
  read(j, "pretrain_lr", c.pretrain_lr);
  if (c.epochs < 0 || c.pretrain_regression_epochs < 0 || c.pretrain_trajectory_epochs < 0)
    throw PreconditionError("epoch counts must be >= 0");
}

void to_json(Json& j, const ScenarioConfig& c) {
  j = Json{{"count", c.count},
           {"dose_jitter", c.dose_jitter},
           {"start_jitter", c.start_jitter},
           {"population_mode", c.population_mode}};
}

void from_json(const Json& j, ScenarioConfig& c) {
  check_keys(j, {"count", "dose_jitter", "start_jitter", "population_mode"}, "scenario config");
  read(j, "count", c.count);
  read(j, "dose_jitter", c.dose_jitter);
  read(j, "start_jitter", c.start_jitter);
  read(j, "population_mode", c.population_mode);
}

void to_json(Json& j, const ArxTrainConfig& c) {
  j = Json{{"arx", c.arx},
           {"scenarios", c.scenarios},
           {"pretrain_epochs", c.pretrain_epochs},
           {"finetune_epochs", c.finetune_epochs},
           {"pretrain_lr", c.pretrain_lr},
           {"finetune_lr", c.finetune_lr}};
}

void from_json(const Json& j, ArxTrainConfig& c) {
  check_keys(j, {"arx", "scenarios", "pretrain_epochs", "finetune_epochs", "pretrain_lr", "finetune_lr"},
             "ARX training config");
  read(j, "arx", c.arx);
  read(j, "scenarios", c.scenarios);
  read(j, "pretrain_epochs", c.pretrain_epochs);
  read(j, "finetune_epochs", c.finetune_epochs);
  read(j, "pretrain_lr", c.pretrain_lr);
  read(j, "finetune_lr", c.finetune_lr);
  if (c.pretrain_epochs < 0 || c.finetune_epochs < 0) throw PreconditionError("epoch counts must be >= 0");
}

void to_json(Json& j, const ModelConfigs& c) { j = Json{{"mech", c.mech}, {"ude", c.ude}, {"arx", c.arx}}; }

void from_json(const Json& j, ModelConfigs& c) {
  check_keys(j, {"mech", "ude", "arx"}, "hyperparameters");
  read(j, "mech", c.mech);
  read(j, "ude", c.ude);
  read(j, "arx", c.arx);
}

void to_json(Json& j, const VirtualCohortSpec& s) {
  j = Json{{"n_patients", s.n_patients},
           {"model", to_string(s.model)},
           {"population", s.population},
           {"cv_gamma", s.cv_gamma},
           {"cv_mtt", s.cv_mtt},
           {"cv_c0", s.cv_c0},
           {"cv_e_eff", s.cv_e_eff},
           {"cycle_lengths", s.cycle_lengths},
           {"min_cycles", s.min_cycles},
           {"max_cycles", s.max_cycles},
           {"treatment_days", s.treatment_days},
           {"dose_jitter", s.dose_jitter},
           {"dense_fraction", s.dense_fraction},
           {"dense_min_obs", s.dense_min_obs},
           {"dense_max_obs", s.dense_max_obs},
           {"sparse_obs", s.sparse_obs},
           {"baseline_observation", s.baseline_observation},
           {"noise_sd", s.noise_sd},
           {"cumulative_toxicity", s.cumulative_toxicity},
           {"deformed_fraction", s.deformed_fraction},
           {"id_prefix", s.id_prefix},
           {"seed", s.seed}};
}

void from_json(const Json& j, VirtualCohortSpec& s) {
  check_keys(j,
             {"n_patients", "model", "population", "cv_gamma", "cv_mtt", "cv_c0", "cv_e_eff", "cycle_lengths",
              "min_cycles", "max_cycles", "treatment_days", "dose_jitter", "dense_fraction", "dense_min_obs",
              "dense_max_obs", "sparse_obs", "baseline_observation", "noise_sd", "cumulative_toxicity",
              "deformed_fraction", "id_prefix", "seed"},
             "cohort spec");
  read(j, "n_patients", s.n_patients);
  const MechModel before = s.model;
  read_enum(j, "model", s.model, mech_model_from_string);
  // a new model without explicit parameters starts at its own population values
  if (s.model != before && !j.contains("population")) s.population = MechParams::population(s.model);
  read(j, "population", s.population);
  s.population.model = s.model;
  read(j, "cv_gamma", s.cv_gamma);
  read(j, "cv_mtt", s.cv_mtt);
  read(j, "cv_c0", s.cv_c0);
  read(j, "cv_e_eff", s.cv_e_eff);
  read(j, "cycle_lengths", s.cycle_lengths);
  read(j, "min_cycles", s.min_cycles);
  read(j, "max_cycles", s.max_cycles);
  read(j, "treatment_days", s.treatment_days);
  read(j, "dose_jitter", s.dose_jitter);
  read(j, "dense_fraction", s.dense_fraction);
  read(j, "dense_min_obs", s.dense_min_obs);
  read(j, "dense_max_obs", s.dense_max_obs);
  read(j, "sparse_obs", s.sparse_obs);
  read(j, "baseline_observation", s.baseline_observation);
  read(j, "noise_sd", s.noise_sd);
  read(j, "cumulative_toxicity", s.cumulative_toxicity);
  read(j, "deformed_fraction", s.deformed_fraction);
  read(j, "id_prefix", s.id_prefix);
  read(j, "seed", s.seed);
}

// ---- fit results -----------------------------------------------------------

void to_json(Json& j, const FitResult& f) {
  Json params;
  if (const auto* m = std::get_if<MechFit>(&f.parameters)) {
    params = Json{{"params", m->params}, {"initial_level", nullptr}};
    if (m->initial_level) params["initial_level"] = *m->initial_level;
  } else if (const auto* u = std::get_if<UdeFit>(&f.parameters)) {
    params = Json{{"ude", u->model}, {"warmup_days", u->warmup_days}};
  } else {
    const auto& a = std::get<ArxFit>(f.parameters);
    params = Json{{"net", a.net}, {"config", a.config}, {"baseline", a.baseline}};
  }
  j = Json{{"model", to_string(f.model)},   {"patient_id", f.patient_id}, {"n_train", f.n_train},
           {"train_loss", f.train_loss},    {"iterations", f.iterations}, {"converged", f.converged},
           {"termination", f.termination},  {"parameters", params}};
}

void from_json(const Json& j, FitResult& f) {
  check_keys(j, {"model", "patient_id", "n_train", "train_loss", "iterations", "converged", "termination", "parameters"},
             "fit result");
  if (!j.contains("model") || !j.contains("parameters")) throw PreconditionError("fit result lacks model or parameters");
  read_enum(j, "model", f.model, model_id_from_string);
  read(j, "patient_id", f.patient_id);
  read(j, "n_train", f.n_train);
  read(j, "train_loss", f.train_loss);
  read(j, "iterations", f.iterations);
  read(j, "converged", f.converged);
  read(j, "termination", f.termination);
  const Json& p = j.at("parameters");
  if (is_mechanistic(f.model)) {
    check_keys(p, {"params", "initial_level"}, "mechanistic fit");
    MechFit m{MechParams::population(mech_model_of(f.model)), std::nullopt};
    read(p, "params", m.params);
    if (p.contains("initial_level") && !p.at("initial_level").is_null()) m.initial_level = p.at("initial_level").get<double>();
    m.params.validate();
    f.parameters = m;
  } else if (f.model == ModelId::UdeAdd || f.model == ModelId::UdeRep) {
    check_keys(p, {"ude", "warmup_days"}, "UDE fit");
    UdeFit u;
    if (!p.contains("ude")) throw PreconditionError("UDE fit lacks 'ude'");
    from_json(p.at("ude"), u.model);
    read(p, "warmup_days", u.warmup_days);
    f.parameters = u;
  } else {
    check_keys(p, {"net", "config", "baseline"}, "ARX fit");
    ArxFit a;
    if (!p.contains("net")) throw PreconditionError("ARX fit lacks 'net'");
    read(p, "config", a.config);
    from_json(p.at("net"), a.net);
    read(p, "baseline", a.baseline);
    f.parameters = a;
  }
}

// ---- files -----------------------------------------------------------------

Json read_json_file(const std::filesystem::path& path) {
  auto in = detail::open_input(path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
  auto out = detail::open_output(path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

FitResult load_fit(const std::filesystem::path& path) {
  FitResult f;
  try {
    from_json(read_json_file(path), f);
  } catch (const PreconditionError& e) {
    throw PreconditionError(path.string() + ": " + e.what());
  }
  return f;
}

void save_fit(const FitResult& fit, const std::filesystem::path& path) { write_json_file(Json(fit), path); }

MechParams load_mech_params(const std::filesystem::path& path, MechModel model) {
  const Json j = read_json_file(path);
  MechParams p = MechParams::population(model);
  if (j.contains("model") && mech_model_from_string(j.at("model").get<std::string>()) != model)
    throw PreconditionError(path.string() + ": parameter file is for model '" + j.at("model").get<std::string>() + "'");
  from_json(j, p);
  p.validate();
  return p;
}

}  // namespace hemadyn
