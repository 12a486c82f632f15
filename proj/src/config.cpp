#include "lkaseg/config.hpp"

#include <functional>
#include <map>

#include <json.hpp>

#include "lkaseg/errors.hpp"
#include "lkaseg/netpbm.hpp"

namespace lkaseg {
namespace {

using nlohmann::json;

json parse_object(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  return j;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key + ": expected true or false");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(key + ": expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(key + ": expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(key + ": expected a string");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

void check_version(const json& j) {
  if (!j.contains("version")) return;
  const int v = get_as<int>(j["version"], "version");
  if (v != kConfigVersion) {
    throw ConfigError("version: " + std::to_string(v) + " unsupported, expected " + std::to_string(kConfigVersion));
  }
}

using Setter = std::function<void(RunConfig&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto model_int = [&t](const char* key, int ModelConfig::*m) {
      t[key] = [m, key](RunConfig& c, const json& v) { c.model.*m = get_as<int>(v, key); };
    };
    auto model_bool = [&t](const char* key, bool ModelConfig::*m) {
      t[key] = [m, key](RunConfig& c, const json& v) { c.model.*m = get_as<bool>(v, key); };
    };
    model_int("class_count", &ModelConfig::class_count);
    model_int("stem_width", &ModelConfig::stem_width);
    model_int("low_width", &ModelConfig::low_width);
    model_int("eva_blocks_per_stage", &ModelConfig::eva_blocks_per_stage);
    model_int("expansion_ratio", &ModelConfig::expansion_ratio);
    model_int("head_width", &ModelConfig::head_width);
    model_bool("boundary_head", &ModelConfig::boundary_head);
    model_bool("aux_head", &ModelConfig::aux_head);
    t["high_widths"] = [](RunConfig& c, const json& v) {
      if (!v.is_array() || v.size() != 2) throw ConfigError("high_widths: expected two integers");
      for (std::size_t i = 0; i < 2; ++i) c.model.high_widths[i] = get_as<int>(v[i], "high_widths");
    };
    t["exchange_points"] = [](RunConfig& c, const json& v) {
      if (!v.is_array()) throw ConfigError("exchange_points: expected an array of stage numbers");
      c.model.exchange_points.clear();
      for (const auto& e : v) c.model.exchange_points.push_back(get_as<int>(e, "exchange_points"));
    };
    t["ppm"] = [](RunConfig& c, const json& v) {
      const auto s = get_as<std::string>(v, "ppm");
      if (s == "dlkppm") {
        c.model.ppm = PpmKind::kDlkppm;
      } else if (s == "dappm") {
        c.model.ppm = PpmKind::kDappm;
      } else {
        throw ConfigError("ppm: expected \"dlkppm\" or \"dappm\", got \"" + s + "\"");
      }
    };
    t["fusion"] = [](RunConfig& c, const json& v) {
      const auto s = get_as<std::string>(v, "fusion");
      if (s == "bgaf") {
        c.model.fusion = FusionKind::kBgaf;
      } else if (s == "fixed_half") {
        c.model.fusion = FusionKind::kFixedHalf;
      } else {
        throw ConfigError("fusion: expected \"bgaf\" or \"fixed_half\", got \"" + s + "\"");
      }
    };

    auto train_field = [&t](const char* key, auto TrainConfig::*m) {
      using T = std::remove_reference_t<decltype(std::declval<TrainConfig&>().*m)>;
      t[key] = [m, key](RunConfig& c, const json& v) { c.train.*m = get_as<T>(v, key); };
    };
    train_field("epochs", &TrainConfig::epochs);
    train_field("batch_size", &TrainConfig::batch_size);
    train_field("base_lr", &TrainConfig::base_lr);
    train_field("momentum", &TrainConfig::momentum);
    train_field("weight_decay", &TrainConfig::weight_decay);
    train_field("poly_power", &TrainConfig::poly_power);
    train_field("ohem_threshold", &TrainConfig::ohem_threshold);
    train_field("ohem_min_kept", &TrainConfig::ohem_min_kept);
    train_field("aux_weight", &TrainConfig::aux_weight);
    train_field("boundary_weight", &TrainConfig::boundary_weight);
    train_field("boundary_radius", &TrainConfig::boundary_radius);
    train_field("flip", &TrainConfig::flip);
    train_field("crop_height", &TrainConfig::crop_height);
    train_field("crop_width", &TrainConfig::crop_width);
    train_field("scale_aug", &TrainConfig::scale_aug);
    train_field("seed", &TrainConfig::seed);
    train_field("threads", &TrainConfig::threads);

    auto run_field = [&t](const char* key, auto RunConfig::*m) {
      using T = std::remove_reference_t<decltype(std::declval<RunConfig&>().*m)>;
      t[key] = [m, key](RunConfig& c, const json& v) { c.*m = get_as<T>(v, key); };
    };
    run_field("train_dir", &RunConfig::train_dir);
    run_field("val_dir", &RunConfig::val_dir);
    run_field("input_height", &RunConfig::input_height);
    run_field("input_width", &RunConfig::input_width);
    run_field("batch", &RunConfig::batch);
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (batch < 1) throw ConfigError("batch: must be at least 1");
  if (input_height < 64 || input_height % 64 != 0) throw ConfigError("input_height: must be a positive multiple of 64");
  if (input_width < 64 || input_width % 64 != 0) throw ConfigError("input_width: must be a positive multiple of 64");
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_object(json_text);
  check_version(j);
  RunConfig c;
  if (j.contains("preset")) {
    c.preset = get_as<std::string>(j["preset"], "preset");
    c.model = ModelConfig::preset(c.preset);
  }
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    if (key == "version" || key == "preset") continue;
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key \"" + key + "\"");
    it->second(c, value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config " + path.string());
  }
  try {
    return parse_run_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_json(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  json j = json::object();
  j["version"] = kConfigVersion;
  j["preset"] = c.preset;
  j["class_count"] = m.class_count;
  j["stem_width"] = m.stem_width;
  j["low_width"] = m.low_width;
  j["high_widths"] = {m.high_widths[0], m.high_widths[1]};
  j["eva_blocks_per_stage"] = m.eva_blocks_per_stage;
  j["expansion_ratio"] = m.expansion_ratio;
  j["head_width"] = m.head_width;
  j["exchange_points"] = m.exchange_points;
  j["ppm"] = m.ppm == PpmKind::kDlkppm ? "dlkppm" : "dappm";
  j["fusion"] = m.fusion == FusionKind::kBgaf ? "bgaf" : "fixed_half";
  j["boundary_head"] = m.boundary_head;
  j["aux_head"] = m.aux_head;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["base_lr"] = t.base_lr;
  j["momentum"] = t.momentum;
  j["weight_decay"] = t.weight_decay;
  j["poly_power"] = t.poly_power;
  j["ohem_threshold"] = t.ohem_threshold;
  j["ohem_min_kept"] = t.ohem_min_kept;
  j["aux_weight"] = t.aux_weight;
  j["boundary_weight"] = t.boundary_weight;
  j["boundary_radius"] = t.boundary_radius;
  j["flip"] = t.flip;
  j["crop_height"] = t.crop_height;
  j["crop_width"] = t.crop_width;
  j["scale_aug"] = t.scale_aug;
  j["seed"] = t.seed;
  j["threads"] = t.threads;
  j["train_dir"] = c.train_dir;
  j["val_dir"] = c.val_dir;
  j["input_height"] = c.input_height;
  j["input_width"] = c.input_width;
  j["batch"] = c.batch;
  return j.dump(2) + "\n";
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  const json j = parse_object(json_text);
  check_version(j);
  SynthSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "version") continue;
    if (key == "seed") {
      s.seed = get_as<std::uint64_t>(value, key);
    } else if (key == "count") {
      s.count = get_as<int>(value, key);
    } else if (key == "height") {
      s.height = get_as<int>(value, key);
    } else if (key == "width") {
      s.width = get_as<int>(value, key);
    } else if (key == "class_count") {
      s.class_count = get_as<int>(value, key);
    } else if (key == "density") {
      s.density = get_as<int>(value, key);
    } else if (key == "min_shape_size") {
      s.min_shape_size = get_as<int>(value, key);
    } else {
      throw ConfigError("unknown spec key \"" + key + "\"");
    }
  }
  s.validate();
  return s;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read spec " + path.string());
  }
  return parse_synth_spec(text);
}

}  // namespace lkaseg
