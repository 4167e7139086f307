#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "svnerf/config.hpp"
#include "svnerf/data.hpp"
#include "svnerf/metrics.hpp"
#include "svnerf/model.hpp"
#include "svnerf/renderer.hpp"

namespace svnerf {

// Mean over rays of the squared L2 color error; `grad` (optional) receives dL/dpred.
template <typename T>
T photometric_loss(const Mat<T>& pred, const Mat<T>& gt, Mat<T>* grad = nullptr);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  nn::ParameterStore<T> m, v;
  std::int64_t t = 0;

  static AdamState like(const nn::ParameterStore<T>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

template <typename T>
void adam_update(nn::ParameterStore<T>& p, const nn::ParameterStore<T>& grads, AdamState<T>& state, double lr,
                 const AdamOptions& opt);

// Scales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
template <typename T>
double clip_grad_norm(nn::ParameterStore<T>& grads, double max_norm);

// Parameter arrays with names and shapes, little-endian float32.
void write_parameters(std::ostream& out, const nn::ParameterStore<float>& p);
nn::ParameterStore<float> read_parameters(std::istream& in);

struct Checkpoint {
  TrainConfig config;
  std::int64_t step = 0;
  nn::ParameterStore<float> params;
  AdamState<float> adam;
  std::string rng_state;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
// Throws DataError on corrupt or truncated files. When `expected_hash` is non-zero the stored model hash must match.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash = 0);

struct StepRecord {
  std::int64_t step = 0;
  std::string scene;
  double loss = 0;
  double seconds = 0;
};

std::string to_json(const StepRecord& r);

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<SceneRecord> scenes);

  // Runs one optimization step; throws NumericError on a non-finite loss.
  StepRecord step();
  std::int64_t steps_done() const { return step_; }

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& c);

  const TrainConfig& config() const { return cfg_; }
  const Model<float>& model() const { return model_; }
  const nn::ParameterStore<float>& params() const { return params_; }
  nn::ParameterStore<float>& params() { return params_; }
  const nn::ParameterStore<float>& last_grads() const { return grads_; }
  const std::vector<SceneRecord>& scenes() const { return scenes_; }

  // Per parameter group, "name  norm" lines.
  std::string parameter_norm_table() const;

 private:
  TrainConfig cfg_;
  std::vector<SceneRecord> scenes_;
  std::vector<std::vector<int>> train_views_;
  nn::ParameterStore<float> params_, grads_;
  Model<float> model_;
  AdamState<float> adam_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
};

struct TrainRunOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume;  // checkpoint to resume from (empty: fresh start)
  std::int64_t stop_after = -1;  // stop once this many steps are done (-1: config.steps)
  std::function<void(const StepRecord&)> on_step;
};

// Fresh or resumed training with JSON-lines logging (train_log.jsonl, appended) and checkpoints
// (checkpoint.bin, plus checkpoint_NNNNNN.bin every checkpoint_every steps). On a non-finite loss writes
// nonfinite_dump.txt and rethrows.
void run_training(const TrainConfig& config, std::vector<SceneRecord> scenes, const TrainRunOptions& options);

// Sources of the training batch for `target`: the nearest non-held-out views.
std::vector<int> training_sources(const SceneRecord& scene, int target, int count);

struct EvaluationOptions {
  Difficulty difficulty = Difficulty::Small;
  int chunk = 4096;
  std::filesystem::path render_dir;  // when set, renderings are written to <dir>/<scene>/<target>/
};

Report evaluate(const Model<float>& model, const nn::ParameterStore<float>& params,
                const std::vector<SceneRecord>& scenes, const EvaluationOptions& options);

// Builds the views a split entry uses, reference first.
std::vector<CameraView> gather_views(const SceneRecord& scene, const std::vector<int>& ids);

}  // namespace svnerf
