#pragma once

// JSON conversions for parameters, networks, configs and fit results.
// Readers of config objects start from the target's current values and only
// overwrite the keys present; unknown keys are rejected.

#include <filesystem>

#include <json.hpp>

#include "hemadyn/arx_gru.hpp"
#include "hemadyn/mech_models.hpp"
#include "hemadyn/neural.hpp"
#include "hemadyn/objectives.hpp"
#include "hemadyn/pipelines.hpp"
#include "hemadyn/ude.hpp"

namespace hemadyn {

using Json = nlohmann::json;

void to_json(Json& j, const FribergParams& p);
void from_json(const Json& j, FribergParams& p);
void to_json(Json& j, const MechParams& p);
void from_json(const Json& j, MechParams& p);

void to_json(Json& j, const MlpSpec& s);
void from_json(const Json& j, MlpSpec& s);
void to_json(Json& j, const MlpNet& n);
void from_json(const Json& j, MlpNet& n);
void to_json(Json& j, const UdeModel& m);
void from_json(const Json& j, UdeModel& m);
void to_json(Json& j, const GruNet& n);
void from_json(const Json& j, GruNet& n);

void to_json(Json& j, const LrSchedule& s);
void from_json(const Json& j, LrSchedule& s);
void to_json(Json& j, const NelderMeadOptions& o);
void from_json(const Json& j, NelderMeadOptions& o);
void to_json(Json& j, const UdeLossConfig& c);
void from_json(const Json& j, UdeLossConfig& c);
void to_json(Json& j, const ArxConfig& c);
void from_json(const Json& j, ArxConfig& c);
void to_json(Json& j, const MechFitConfig& c);
void from_json(const Json& j, MechFitConfig& c);
void to_json(Json& j, const UdeTrainConfig& c);
void from_json(const Json& j, UdeTrainConfig& c);
void to_json(Json& j, const ScenarioConfig& c);
void from_json(const Json& j, ScenarioConfig& c);
void to_json(Json& j, const ArxTrainConfig& c);
void from_json(const Json& j, ArxTrainConfig& c);
void to_json(Json& j, const ModelConfigs& c);
void from_json(const Json& j, ModelConfigs& c);
void to_json(Json& j, const VirtualCohortSpec& s);
void from_json(const Json& j, VirtualCohortSpec& s);

void to_json(Json& j, const FitResult& f);
void from_json(const Json& j, FitResult& f);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);

FitResult load_fit(const std::filesystem::path& path);
void save_fit(const FitResult& fit, const std::filesystem::path& path);

/// Parameter file of one model: population defaults overridden by the keys
/// present. The "model" key, when present, must name `model`.
MechParams load_mech_params(const std::filesystem::path& path, MechModel model);

}  // namespace hemadyn
