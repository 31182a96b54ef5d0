#include "mgproto/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <vector>

#include "mgproto/errors.hpp"

namespace mgproto {

namespace {

using nlohmann::json;

enum class Kind { Count, Real, Flag, Seed, Text, RealList };

struct Field {
  const char* key;
  Kind kind;
  std::function<void(ExperimentConfig&, const json&)> set;
  std::function<json(const ExperimentConfig&)> get;
};

template <typename T>
Field field(const char* key, Kind kind, T ExperimentConfig::*member) {
  return {key, kind, [member](ExperimentConfig& c, const json& v) { c.*member = v.get<T>(); },
          [member](const ExperimentConfig& c) { return json(c.*member); }};
}

template <typename T>
Field train_field(const char* key, Kind kind, T TrainConfig::*member) {
  return {key, kind, [member](ExperimentConfig& c, const json& v) { c.train.*member = v.get<T>(); },
          [member](const ExperimentConfig& c) { return json(c.train.*member); }};
}

template <typename T>
Field em_field(const char* key, Kind kind, T EmConfig::*member) {
  return {key, kind, [member](ExperimentConfig& c, const json& v) { c.train.em.*member = v.get<T>(); },
          [member](const ExperimentConfig& c) { return json(c.train.em.*member); }};
}

template <typename T>
Field data_field(const char* key, Kind kind, T SyntheticSpec::*member) {
  return {key, kind, [member](ExperimentConfig& c, const json& v) { c.data.*member = v.get<T>(); },
          [member](const ExperimentConfig& c) { return json(c.data.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      field("seed", Kind::Seed, &ExperimentConfig::seed),
      field("output_dir", Kind::Text, &ExperimentConfig::output_dir),
      // model and training
      train_field("dim", Kind::Count, &TrainConfig::dim),
      train_field("num_prototypes", Kind::Count, &TrainConfig::num_prototypes),
      train_field("levels", Kind::Count, &TrainConfig::levels),
      train_field("bank_capacity", Kind::Count, &TrainConfig::bank_capacity),
      train_field("lambda1", Kind::Real, &TrainConfig::lambda1),
      train_field("lambda2", Kind::Real, &TrainConfig::lambda2),
      train_field("proxy_margin", Kind::Real, &TrainConfig::proxy_margin),
      train_field("proxy_scale", Kind::Real, &TrainConfig::proxy_scale),
      train_field("mining", Kind::Flag, &TrainConfig::mining),
      train_field("aux", Kind::Flag, &TrainConfig::aux),
      train_field("point_based", Kind::Flag, &TrainConfig::point_based),
      train_field("lr_backbone", Kind::Real, &TrainConfig::lr_backbone),
      train_field("lr_addon", Kind::Real, &TrainConfig::lr_addon),
      train_field("lr_proxy", Kind::Real, &TrainConfig::lr_proxy),
      train_field("lr_prototype", Kind::Real, &TrainConfig::lr_prototype),
      train_field("lr_decay", Kind::Real, &TrainConfig::lr_decay),
      train_field("lr_decay_every", Kind::Count, &TrainConfig::lr_decay_every),
      train_field("epochs", Kind::Count, &TrainConfig::epochs),
      train_field("batch_size", Kind::Count, &TrainConfig::batch_size),
      train_field("warmup_epochs", Kind::Count, &TrainConfig::warmup_epochs),
      train_field("init_from_data", Kind::Flag, &TrainConfig::init_from_data),
      train_field("init_noise", Kind::Real, &TrainConfig::init_noise),
      train_field("threads", Kind::Count, &TrainConfig::threads),
      // EM
      em_field("em_loops", Kind::Count, &EmConfig::loops),
      em_field("smoothing_alpha", Kind::Real, &EmConfig::smoothing_alpha),
      em_field("ema_tau", Kind::Real, &EmConfig::ema_tau),
      em_field("m_step_lr", Kind::Real, &EmConfig::m_step_lr),
      em_field("m_step_iters", Kind::Count, &EmConfig::m_step_iters),
      em_field("diversity", Kind::Flag, &EmConfig::diversity_enabled),
      // data
      data_field("num_classes", Kind::Count, &SyntheticSpec::num_classes),
      data_field("parts_per_class", Kind::Count, &SyntheticSpec::parts_per_class),
      data_field("parts_per_image", Kind::Count, &SyntheticSpec::parts_per_image),
      data_field("part_weights", Kind::RealList, &SyntheticSpec::part_weights),
      data_field("raw_dim", Kind::Count, &SyntheticSpec::raw_dim),
      data_field("height", Kind::Count, &SyntheticSpec::height),
      data_field("width", Kind::Count, &SyntheticSpec::width),
      data_field("center_scale", Kind::Real, &SyntheticSpec::center_scale),
      data_field("class_spread", Kind::Real, &SyntheticSpec::class_spread),
      data_field("part_spread", Kind::Real, &SyntheticSpec::part_spread),
      data_field("noise_sigma", Kind::Real, &SyntheticSpec::noise_sigma),
      data_field("background_sigma", Kind::Real, &SyntheticSpec::background_sigma),
      data_field("train_per_class", Kind::Count, &SyntheticSpec::train_per_class),
      data_field("test_per_class", Kind::Count, &SyntheticSpec::test_per_class),
      data_field("ood_samples", Kind::Count, &SyntheticSpec::ood_samples),
      data_field("ood_shift", Kind::Real, &SyntheticSpec::ood_shift),
      // evaluation
      field("renormalize_pruned", Kind::Flag, &ExperimentConfig::renormalize_pruned),
      field("abstain_quantile", Kind::Real, &ExperimentConfig::abstain_quantile),
      field("histogram_bins", Kind::Count, &ExperimentConfig::histogram_bins),
  };
  return table;
}

void check_kind(const Field& f, const json& v) {
  const std::string key = f.key;
  switch (f.kind) {
    case Kind::Count:
    case Kind::Seed:
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
      }
      break;
    case Kind::Real:
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        throw ConfigError("config key '" + key + "' must be a finite number");
      }
      break;
    case Kind::Flag:
      if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
      break;
    case Kind::Text:
      if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
      break;
    case Kind::RealList:
      if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array of numbers");
      for (const auto& e : v) {
        if (!e.is_number() || !std::isfinite(e.get<double>())) {
          throw ConfigError("config key '" + key + "' must contain finite numbers only");
        }
      }
      break;
  }
}

json parse_env(const Field& f, const std::string& name, const std::string& text) {
  auto fail = [&]() -> json { throw ConfigError("environment override " + name + "='" + text + "' is not valid"); };
  switch (f.kind) {
    case Kind::Text:
      return text;
    case Kind::Flag:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      return fail();
    case Kind::Count:
    case Kind::Seed: {
      if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) return fail();
      errno = 0;
      const auto v = std::strtoull(text.c_str(), nullptr, 10);
      if (errno == ERANGE) return fail();
      return json(static_cast<std::uint64_t>(v));
    }
    case Kind::Real: {
      char* end = nullptr;
      const double v = std::strtod(text.c_str(), &end);
      if (text.empty() || *end != '\0' || !std::isfinite(v)) return fail();
      return v;
    }
    case Kind::RealList:
      break;
  }
  return fail();
}

std::string env_name(const char* key) {
  std::string name = "MGPROTO_";
  for (const char* p = key; *p; ++p) name += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
  return name;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    train.validate();
    data.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (output_dir.empty()) throw ConfigError("invalid config: output_dir must not be empty");
  if (train.levels > data.height * data.width) {
    throw ConfigError("invalid config: levels (" + std::to_string(train.levels) + ") exceed grid positions (" +
                      std::to_string(data.height * data.width) + ")");
  }
  if (abstain_quantile < 0.0 || abstain_quantile > 1.0) {
    throw ConfigError("invalid config: abstain_quantile must lie in [0, 1]");
  }
  if (histogram_bins == 0) throw ConfigError("invalid config: histogram_bins must be positive");
}

ExperimentConfig config_from_json(const json& j, bool apply_env) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    check_kind(*it, value);
    it->set(cfg, value);
  }
  if (apply_env) {
    for (const auto& f : fields()) {
      if (f.kind == Kind::RealList) continue;
      const auto name = env_name(f.key);
      if (const char* text = std::getenv(name.c_str())) f.set(cfg, parse_env(f, name, text));
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, bool apply_env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, apply_env);
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json out;
  for (const auto& f : fields()) out[f.key] = f.get(cfg);
  return out;
}

}  // namespace mgproto
