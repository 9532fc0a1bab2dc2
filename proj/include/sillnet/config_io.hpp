#pragma once

#include <string>

#include "json.hpp"
#include "sillnet/data.hpp"
#include "sillnet/training.hpp"

namespace sillnet {

// The CLI's resolved configuration: the training knobs plus the synthetic
// benchmark generator knobs, serialized as one flat JSON object. The single
// "seed" key feeds both halves.
struct AppConfig {
  TrainConfig train;
  SyntheticConfig synth;
};

// Flat JSON with every knob present (defaults documented by serializing a
// default-constructed AppConfig).
nlohmann::json app_config_to_json(const AppConfig& cfg);

// Applies the keys present in `j` over defaults (or over `base`). Unknown
// keys and ill-typed values are rejected with std::invalid_argument naming
// the key.
AppConfig app_config_from_json(const nlohmann::json& j, AppConfig base = {});

// Parses one "key=value" command-line override into a JSON patch entry.
// Values parse as JSON scalars where possible and fall back to strings.
void apply_override(nlohmann::json& cfg, const std::string& key_eq_value);

// Content digest of a resolved configuration (canonical compact dump).
std::string config_digest(const nlohmann::json& cfg);

}  // namespace sillnet
