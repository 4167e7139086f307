#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svnerf/model.hpp"

namespace svnerf {

struct TrainConfig {
  std::string base = "tiny";   // "tiny" or "full" model sizes
  std::string preset = "GA_VD";
  ModelConfig model = ModelConfig::tiny();

  int rays_per_batch = 1024;
  double learning_rate = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::int64_t steps = 5000;
  std::uint64_t seed = 0;
  int source_views = 3;
  bool cosine_decay = false;
  double grad_clip = 0;  // global-norm clip threshold; 0 disables
  bool jitter = true;    // stratified sample jitter during training
  std::int64_t checkpoint_every = 1000;
  std::int64_t log_every = 1;
};

// Ablation presets: BL, A_V, A_VD, G_V, G_VD, AG_VD, GA_VD.
void apply_preset(const std::string& name, FieldConfig& field);
const std::vector<std::string>& preset_names();

// Flat "key = value" lines, '#' comments. `base` and `preset` are applied first wherever they appear,
// then every other key in file order. Unknown keys and malformed values throw ConfigError.
TrainConfig parse_config(const std::string& text, TrainConfig start = {});
// Every key with its current value; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& config);

}  // namespace svnerf
