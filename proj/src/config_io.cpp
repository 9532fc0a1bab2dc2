#include "sillnet/config_io.hpp"

#include <stdexcept>

#include "sillnet/manifest.hpp"

namespace sillnet {

namespace {

int as_int(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer())
    throw std::invalid_argument("config: key '" + key + "' expects an integer");
  return v.get<int>();
}

double as_double(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) throw std::invalid_argument("config: key '" + key + "' expects a number");
  return v.get<double>();
}

float as_float(const nlohmann::json& v, const std::string& key) {
  return static_cast<float>(as_double(v, key));
}

bool as_bool(const nlohmann::json& v, const std::string& key) {
  if (!v.is_boolean()) throw std::invalid_argument("config: key '" + key + "' expects a boolean");
  return v.get<bool>();
}

std::uint64_t as_seed(const nlohmann::json& v, const std::string& key) {
  if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)))
    throw std::invalid_argument("config: key '" + key + "' expects a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string as_string(const nlohmann::json& v, const std::string& key) {
  if (!v.is_string()) throw std::invalid_argument("config: key '" + key + "' expects a string");
  return v.get<std::string>();
}

}  // namespace

nlohmann::json app_config_to_json(const AppConfig& cfg) {
  nlohmann::json j;
  const TrainConfig& t = cfg.train;
  j["model_channels"] = t.model_channels;
  j["r"] = t.r;
  j["r_phase2"] = t.r_phase2;
  j["lr"] = t.lr;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["weight_decay"] = t.weight_decay;
  j["batch_size"] = t.batch_size;
  j["epochs_phase1"] = t.epochs_phase1;
  j["epochs_phase2"] = t.epochs_phase2;
  j["epochs_recon"] = t.epochs_recon;
  j["seed"] = t.seed;
  j["exchange"] = t.exchange;
  j["match"] = t.match;
  j["recon"] = t.recon;
  j["illu"] = t.illu;
  j["template_processing"] = t.template_processing;
  j["use_illum_augmentation"] = t.use_illum_augmentation;
  j["freeze_encoder_phase2"] = t.freeze_encoder_phase2;
  j["template_variants"] = t.template_variants;
  j["repo_k"] = t.repo_k;
  j["repo_n_exp"] = t.repo_n_exp;
  j["n_total_classes"] = t.n_total_classes;
  j["checkpoint_dir"] = t.checkpoint_dir;

  const SyntheticConfig& s = cfg.synth;
  j["synth_n_classes"] = s.n_classes;
  j["synth_samples_per_class"] = s.samples_per_class;
  j["synth_test_samples_per_class"] = s.test_samples_per_class;
  j["synth_image_size"] = s.image_size;
  j["synth_one_shot"] = s.one_shot;
  j["synth_n_test_classes"] = s.n_test_classes;
  j["synth_gradient_strength_min"] = s.gradient_strength.lo;
  j["synth_gradient_strength_max"] = s.gradient_strength.hi;
  j["synth_light_spot_count"] = s.light_spot_count;
  j["synth_light_spot_intensity_min"] = s.light_spot_intensity.lo;
  j["synth_light_spot_intensity_max"] = s.light_spot_intensity.hi;
  j["synth_shadow_count"] = s.shadow_count;
  j["synth_shadow_opacity_min"] = s.shadow_opacity.lo;
  j["synth_shadow_opacity_max"] = s.shadow_opacity.hi;
  j["synth_gamma_min"] = s.gamma.lo;
  j["synth_gamma_max"] = s.gamma.hi;
  j["synth_rotation_deg_min"] = s.rotation_deg.lo;
  j["synth_rotation_deg_max"] = s.rotation_deg.hi;
  j["synth_scale_min"] = s.scale.lo;
  j["synth_scale_max"] = s.scale.hi;
  j["synth_translation_frac_min"] = s.translation_frac.lo;
  j["synth_translation_frac_max"] = s.translation_frac.hi;
  return j;
}

AppConfig app_config_from_json(const nlohmann::json& j, AppConfig base) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  TrainConfig& t = base.train;
  SyntheticConfig& s = base.synth;
  for (const auto& [key, v] : j.items()) {
    if (key == "model_channels") t.model_channels = as_int(v, key);
    else if (key == "r") t.r = as_float(v, key);
    else if (key == "r_phase2") t.r_phase2 = as_float(v, key);
    else if (key == "lr") t.lr = as_double(v, key);
    else if (key == "adam_beta1") t.adam_beta1 = as_double(v, key);
    else if (key == "adam_beta2") t.adam_beta2 = as_double(v, key);
    else if (key == "adam_eps") t.adam_eps = as_double(v, key);
    else if (key == "weight_decay") t.weight_decay = as_double(v, key);
    else if (key == "batch_size") t.batch_size = as_int(v, key);
    else if (key == "epochs_phase1") t.epochs_phase1 = as_int(v, key);
    else if (key == "epochs_phase2") t.epochs_phase2 = as_int(v, key);
    else if (key == "epochs_recon") t.epochs_recon = as_int(v, key);
    else if (key == "seed") t.seed = s.seed = as_seed(v, key);
    else if (key == "exchange") t.exchange = as_bool(v, key);
    else if (key == "match") t.match = as_bool(v, key);
    else if (key == "recon") t.recon = as_bool(v, key);
    else if (key == "illu") t.illu = as_bool(v, key);
    else if (key == "template_processing") t.template_processing = as_bool(v, key);
    else if (key == "use_illum_augmentation") t.use_illum_augmentation = as_bool(v, key);
    else if (key == "freeze_encoder_phase2") t.freeze_encoder_phase2 = as_bool(v, key);
    else if (key == "template_variants") t.template_variants = as_int(v, key);
    else if (key == "repo_k") t.repo_k = as_int(v, key);
    else if (key == "repo_n_exp") t.repo_n_exp = as_int(v, key);
    else if (key == "n_total_classes") t.n_total_classes = as_int(v, key);
    else if (key == "checkpoint_dir") t.checkpoint_dir = as_string(v, key);
    else if (key == "synth_n_classes") s.n_classes = as_int(v, key);
    else if (key == "synth_samples_per_class") s.samples_per_class = as_int(v, key);
    else if (key == "synth_test_samples_per_class") s.test_samples_per_class = as_int(v, key);
    else if (key == "synth_image_size") s.image_size = as_int(v, key);
    else if (key == "synth_one_shot") s.one_shot = as_bool(v, key);
    else if (key == "synth_n_test_classes") s.n_test_classes = as_int(v, key);
    else if (key == "synth_gradient_strength_min") s.gradient_strength.lo = as_double(v, key);
    else if (key == "synth_gradient_strength_max") s.gradient_strength.hi = as_double(v, key);
    else if (key == "synth_light_spot_count") s.light_spot_count = as_int(v, key);
    else if (key == "synth_light_spot_intensity_min") s.light_spot_intensity.lo = as_double(v, key);
    else if (key == "synth_light_spot_intensity_max") s.light_spot_intensity.hi = as_double(v, key);
    else if (key == "synth_shadow_count") s.shadow_count = as_int(v, key);
    else if (key == "synth_shadow_opacity_min") s.shadow_opacity.lo = as_double(v, key);
    else if (key == "synth_shadow_opacity_max") s.shadow_opacity.hi = as_double(v, key);
    else if (key == "synth_gamma_min") s.gamma.lo = as_double(v, key);
    else if (key == "synth_gamma_max") s.gamma.hi = as_double(v, key);
    else if (key == "synth_rotation_deg_min") s.rotation_deg.lo = as_double(v, key);
    else if (key == "synth_rotation_deg_max") s.rotation_deg.hi = as_double(v, key);
    else if (key == "synth_scale_min") s.scale.lo = as_double(v, key);
    else if (key == "synth_scale_max") s.scale.hi = as_double(v, key);
    else if (key == "synth_translation_frac_min") s.translation_frac.lo = as_double(v, key);
    else if (key == "synth_translation_frac_max") s.translation_frac.hi = as_double(v, key);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return base;
}

void apply_override(nlohmann::json& cfg, const std::string& key_eq_value) {
  const std::size_t eq = key_eq_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("--set expects key=value, got '" + key_eq_value + "'");
  const std::string key = key_eq_value.substr(0, eq);
  const std::string raw = key_eq_value.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;  // unquoted strings (e.g. paths)
  cfg[key] = value;
}

std::string config_digest(const nlohmann::json& cfg) {
  return git_blob_sha1(cfg.dump());  // dump() sorts object keys: canonical
}

}  // namespace sillnet
