#include "svnerf/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace svnerf {

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"BL", "A_V", "A_VD", "G_V", "G_VD", "AG_VD", "GA_VD"};
  return names;
}

void apply_preset(const std::string& name, FieldConfig& f) {
  if (name == "BL") {
    f.geometric_rectification = f.appearance_rectification = false;
  } else if (name == "A_V" || name == "A_VD") {
    f.geometric_rectification = false;
    f.appearance_rectification = true;
    f.query = name == "A_V" ? QueryComposition::Direction : QueryComposition::DepthDirection;
  } else if (name == "G_V" || name == "G_VD") {
    f.geometric_rectification = true;
    f.appearance_rectification = false;
    f.query = name == "G_V" ? QueryComposition::Direction : QueryComposition::DepthDirection;
  } else if (name == "AG_VD" || name == "GA_VD") {
    f.geometric_rectification = f.appearance_rectification = true;
    f.query = QueryComposition::DepthDirection;
    f.order = name == "GA_VD" ? RectifyOrder::GeometryFirst : RectifyOrder::AppearanceFirst;
  } else {
    throw ConfigError(fmt::format("unknown preset '{}'", name));
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, text));
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, text));
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

template <typename V>
Setter num(V TrainConfig::*field) {
  return [field](TrainConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<V>(k, v); };
}

template <typename V>
Setter model_num(V ModelConfig::*field) {
  return [field](TrainConfig& c, const std::string& k, const std::string& v) { c.model.*field = parse_number<V>(k, v); };
}

template <typename V>
Setter field_num(V FieldConfig::*field) {
  return [field](TrainConfig& c, const std::string& k, const std::string& v) {
    c.model.field.*field = parse_number<V>(k, v);
  };
}

Setter field_bool(bool FieldConfig::*field) {
  return [field](TrainConfig& c, const std::string& k, const std::string& v) { c.model.field.*field = parse_bool(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s = {
      {"rays_per_batch", num(&TrainConfig::rays_per_batch)},
      {"learning_rate", num(&TrainConfig::learning_rate)},
      {"adam_beta1", num(&TrainConfig::adam_beta1)},
      {"adam_beta2", num(&TrainConfig::adam_beta2)},
      {"adam_epsilon", num(&TrainConfig::adam_epsilon)},
      {"steps", num(&TrainConfig::steps)},
      {"seed", num(&TrainConfig::seed)},
      {"source_views", num(&TrainConfig::source_views)},
      {"grad_clip", num(&TrainConfig::grad_clip)},
      {"checkpoint_every", num(&TrainConfig::checkpoint_every)},
      {"log_every", num(&TrainConfig::log_every)},
      {"cosine_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cosine_decay = parse_bool(k, v); }},
      {"jitter", [](TrainConfig& c, const std::string& k, const std::string& v) { c.jitter = parse_bool(k, v); }},
      {"planes", model_num(&ModelConfig::planes)},
      {"samples", model_num(&ModelConfig::samples)},
      {"unet_base", model_num(&ModelConfig::unet_base)},
      {"image_channels", field_num(&FieldConfig::image_channels)},
      {"volume_channels", field_num(&FieldConfig::volume_channels)},
      {"radiance_channels", field_num(&FieldConfig::radiance_channels)},
      {"attention_dim", field_num(&FieldConfig::attention_dim)},
      {"attention_heads", field_num(&FieldConfig::attention_heads)},
      {"hidden", field_num(&FieldConfig::hidden)},
      {"geometric_rectification", field_bool(&FieldConfig::geometric_rectification)},
      {"appearance_rectification", field_bool(&FieldConfig::appearance_rectification)},
      {"attention_residual", field_bool(&FieldConfig::attention_residual)},
      {"radiance_appearance", field_bool(&FieldConfig::radiance_appearance)},
      {"visibility_weighted_mean", field_bool(&FieldConfig::visibility_weighted_mean)},
      {"unit_intervals",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.model.field.composite.unit_intervals = parse_bool(k, v);
       }},
      {"white_background",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.model.field.composite.white_background = parse_bool(k, v);
       }},
      {"order",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "ga") c.model.field.order = RectifyOrder::GeometryFirst;
         else if (v == "ag") c.model.field.order = RectifyOrder::AppearanceFirst;
         else throw ConfigError(fmt::format("{}: expected 'ga' or 'ag', got '{}'", k, v));
       }},
      {"query",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "vd") c.model.field.query = QueryComposition::DepthDirection;
         else if (v == "v") c.model.field.query = QueryComposition::Direction;
         else throw ConfigError(fmt::format("{}: expected 'v' or 'vd', got '{}'", k, v));
       }},
  };
  return s;
}

void validate(const TrainConfig& c) {
  if (c.rays_per_batch < 1) throw ConfigError("rays_per_batch must be at least 1");
  if (!(c.learning_rate >= 0)) throw ConfigError("learning_rate must be non-negative");
  if (!(c.adam_beta1 >= 0 && c.adam_beta1 < 1) || !(c.adam_beta2 >= 0 && c.adam_beta2 < 1))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(c.adam_epsilon > 0)) throw ConfigError("adam_epsilon must be positive");
  if (c.steps < 0) throw ConfigError("steps must be non-negative");
  if (c.source_views < 2) throw ConfigError("source_views must be at least 2");
  if (c.grad_clip < 0) throw ConfigError("grad_clip must be non-negative");
  if (c.checkpoint_every < 0 || c.log_every < 1) throw ConfigError("checkpoint_every >= 0 and log_every >= 1 required");
  const ModelConfig& m = c.model;
  if (m.planes < 8 || m.planes % 8) throw ConfigError("planes must be a positive multiple of 8");
  if (m.samples < 2) throw ConfigError("samples must be at least 2");
  const FieldConfig& f = m.field;
  if (f.image_channels < 1 || f.volume_channels < 1 || f.radiance_channels < 1 || f.hidden < 1 || m.unet_base < 1)
    throw ConfigError("channel counts must be positive");
  if (f.attention_heads < 1 || f.attention_dim % f.attention_heads)
    throw ConfigError("attention_dim must be a positive multiple of attention_heads");
}

}  // namespace

TrainConfig parse_config(const std::string& text, TrainConfig c) {
  std::vector<std::pair<std::string, std::string>> items;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", lineno));
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key != "base" && key != "preset" && !setters().count(key))
      throw ConfigError(fmt::format("unknown config key '{}' (line {})", key, lineno));
    items.emplace_back(std::move(key), std::move(value));
  }
  for (const auto& [k, v] : items)
    if (k == "base") {
      if (v == "tiny") c.model = ModelConfig::tiny();
      else if (v == "full") c.model = ModelConfig::full();
      else throw ConfigError(fmt::format("base: expected 'tiny' or 'full', got '{}'", v));
      c.base = v;
      apply_preset(c.preset, c.model.field);
    }
  for (const auto& [k, v] : items)
    if (k == "preset") {
      apply_preset(v, c.model.field);
      c.preset = v;
    }
  for (const auto& [k, v] : items)
    if (k != "base" && k != "preset") setters().at(k)(c, k, v);
  validate(c);
  return c;
}

std::string format_config(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  const FieldConfig& f = m.field;
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::string s;
  s += fmt::format("base = {}\npreset = {}\n", c.base, c.preset);
  s += fmt::format("rays_per_batch = {}\nlearning_rate = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_epsilon = {}\n",
                   c.rays_per_batch, c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_epsilon);
  s += fmt::format("steps = {}\nseed = {}\nsource_views = {}\ncosine_decay = {}\ngrad_clip = {}\njitter = {}\n", c.steps,
                   c.seed, c.source_views, b(c.cosine_decay), c.grad_clip, b(c.jitter));
  s += fmt::format("checkpoint_every = {}\nlog_every = {}\n", c.checkpoint_every, c.log_every);
  s += fmt::format("planes = {}\nsamples = {}\nunet_base = {}\n", m.planes, m.samples, m.unet_base);
  s += fmt::format("image_channels = {}\nvolume_channels = {}\nradiance_channels = {}\n", f.image_channels,
                   f.volume_channels, f.radiance_channels);
  s += fmt::format("attention_dim = {}\nattention_heads = {}\nhidden = {}\n", f.attention_dim, f.attention_heads,
                   f.hidden);
  s += fmt::format("geometric_rectification = {}\nappearance_rectification = {}\n", b(f.geometric_rectification),
                   b(f.appearance_rectification));
  s += fmt::format("order = {}\nquery = {}\n", f.order == RectifyOrder::GeometryFirst ? "ga" : "ag",
                   f.query == QueryComposition::DepthDirection ? "vd" : "v");
  s += fmt::format("attention_residual = {}\nradiance_appearance = {}\nvisibility_weighted_mean = {}\n",
                   b(f.attention_residual), b(f.radiance_appearance), b(f.visibility_weighted_mean));
  s += fmt::format("unit_intervals = {}\nwhite_background = {}\n", b(f.composite.unit_intervals),
                   b(f.composite.white_background));
  return s;
}

}  // namespace svnerf
