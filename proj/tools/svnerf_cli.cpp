#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "svnerf/data.hpp"
#include "svnerf/io.hpp"
#include "svnerf/training.hpp"

using namespace svnerf;
namespace fs = std::filesystem;

namespace {

int verbosity() {
  const char* v = std::getenv("SVNERF_VERBOSITY");
  return v ? std::atoi(v) : 1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError(fmt::format("cannot read config file {}", p.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct LoadedModel {
  TrainConfig config;
  nn::ParameterStore<float> params;
  Model<float> model;
};

LoadedModel load_model(const fs::path& checkpoint) {
  Checkpoint c = load_checkpoint(checkpoint);
  LoadedModel m;
  m.config = c.config;
  std::mt19937_64 rng(0);
  m.model = Model<float>(m.params, c.config.model, &rng);
  if (m.params.size() != c.params.size()) throw DataError("checkpoint does not match its own configuration");
  for (int i = 0; i < m.params.size(); ++i) {
    if (m.params.name(i) != c.params.name(i) || m.params.entry(i).shape != c.params.entry(i).shape)
      throw DataError(fmt::format("checkpoint parameter '{}' does not match the model", c.params.name(i)));
  }
  m.params = std::move(c.params);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view radiance field: synthetic data, training, rendering and evaluation"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("make-synthetic", "Write procedurally generated scenes");
  fs::path synth_out;
  int scenes = 2, views = 16, width = 64, height = 64;
  std::uint64_t seed = 0;
  std::string rig = "line";
  double spacing = 0.1;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scenes", scenes, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Seed of the first scene");
  synth->add_option("--rig", rig, "Camera rig")->check(CLI::IsMember({"ring", "line"}));
  synth->add_option("--views", views, "Views per scene")->check(CLI::Range(4, 1000));
  synth->add_option("--width", width, "Image width")->check(CLI::Range(8, 4096));
  synth->add_option("--height", height, "Image height")->check(CLI::Range(8, 4096));
  synth->add_option("--spacing", spacing, "Distance between neighbouring cameras");

  auto* train = app.add_subcommand("train", "Train on a directory of scenes");
  fs::path config_path, data_path, train_out, resume;
  std::int64_t stop_after = -1;
  train->add_option("--config", config_path, "Key = value configuration file");
  train->add_option("--data", data_path, "Scene directory or directory of scenes")->required();
  train->add_option("--out", train_out, "Output directory for logs and checkpoints")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--stop-after", stop_after, "Stop once this many steps are done");

  auto* render = app.add_subcommand("render", "Render one view of a scene");
  fs::path ckpt, scene_path, render_out;
  int target = 0, chunk = 4096;
  std::vector<int> sources;
  render->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  render->add_option("--scene", scene_path, "Scene directory")->required();
  render->add_option("--target-view", target, "Target view index")->required();
  render->add_option("--sources", sources, "Source view ids (default: nearest training views)");
  render->add_option("--out", render_out, "Output directory")->required();
  render->add_option("--chunk", chunk, "Rays per chunk")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate held-out views of a split");
  fs::path eval_ckpt, eval_data, eval_out;
  std::string split = "small";
  int eval_chunk = 4096;
  bool save_renders = false;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Scene directory or directory of scenes")->required();
  eval->add_option("--split", split, "Difficulty level")->check(CLI::IsMember({"small", "medium", "large"}));
  eval->add_option("--out", eval_out, "Output directory for the report")->required();
  eval->add_option("--chunk", eval_chunk, "Rays per chunk")->check(CLI::PositiveNumber);
  eval->add_flag("--save-renders", save_renders, "Also write every rendering");

  auto* presets = app.add_subcommand("print-config", "Print the full configuration for a preset");
  std::string preset = "GA_VD", base = "tiny";
  presets->add_option("--preset", preset, "Ablation preset")->check(CLI::IsMember(preset_names()));
  presets->add_option("--base", base, "Model sizes")->check(CLI::IsMember({"tiny", "full"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      for (int i = 0; i < scenes; ++i) {
        SyntheticSpec spec;
        spec.seed = seed + std::uint64_t(i);
        spec.rig = parse_rig(rig);
        spec.views = views;
        spec.width = width;
        spec.height = height;
        spec.spacing = spacing;
        const SceneRecord s = generate_synthetic_scene(spec);
        save_scene(s, synth_out / s.id);
        if (verbosity() > 0) fmt::print("wrote {}\n", (synth_out / s.id).string());
      }
    } else if (*train) {
      TrainConfig cfg = config_path.empty() ? TrainConfig{} : parse_config(read_file(config_path));
      TrainRunOptions opt;
      opt.out_dir = train_out;
      opt.resume = resume;
      opt.stop_after = stop_after;
      const int v = verbosity();
      opt.on_step = [v, &cfg](const StepRecord& r) {
        if (v > 0 && (r.step % 100 == 0 || r.step == cfg.steps || v > 1))
          fmt::print("step {:>6}  scene {}  loss {:.6f}  {:.3f}s\n", r.step, r.scene, r.loss, r.seconds);
      };
      run_training(cfg, load_scenes(data_path), opt);
    } else if (*render) {
      LoadedModel m = load_model(ckpt);
      const SceneRecord scene = load_scene(scene_path);
      if (target < 0 || target >= int(scene.views.size()))
        throw DataError(fmt::format("target view {} out of range", target));
      if (sources.empty()) sources = training_sources(scene, target, m.config.source_views);
      const std::vector<CameraView> views = gather_views(scene, sources);
      const CameraView& tv = scene.views[target];
      const RenderedImage r = render_image(m.model, m.params, views, tv.camera, tv.near, tv.far, chunk);
      write_rendering(r, render_out);
      if (verbosity() > 0) fmt::print("wrote {}\n", render_out.string());
    } else if (*eval) {
      LoadedModel m = load_model(eval_ckpt);
      EvaluationOptions opt;
      opt.difficulty = parse_difficulty(split);
      opt.chunk = eval_chunk;
      if (save_renders) opt.render_dir = eval_out / "renders";
      const Report report = evaluate(m.model, m.params, load_scenes(eval_data), opt);
      write_text_atomically(eval_out / fmt::format("report_{}.tsv", split), format_report_table(report));
      const std::string summary = format_report_summary(report);
      write_text_atomically(eval_out / fmt::format("summary_{}.txt", split), summary);
      if (verbosity() > 0) fmt::print("{}", summary);
    } else if (*presets) {
      fmt::print("{}", format_config(parse_config(fmt::format("base = {}\npreset = {}\n", base, preset))));
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const CameraError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 3;
  } catch (const DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
