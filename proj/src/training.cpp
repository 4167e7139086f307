#include "svnerf/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "svnerf/io.hpp"

namespace svnerf {

namespace fs = std::filesystem;

template <typename T>
T photometric_loss(const Mat<T>& pred, const Mat<T>& gt, Mat<T>* grad) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw DomainError(fmt::format("loss shapes differ: {}x{} vs {}x{}", pred.rows(), pred.cols(), gt.rows(), gt.cols()));
  if (pred.rows() == 0) throw DomainError("loss over an empty batch");
  const Mat<T> diff = pred - gt;
  const T n = T(pred.rows());
  if (grad) *grad = diff * (T(2) / n);
  T acc = 0;
  for (Eigen::Index r = 0; r < diff.rows(); ++r) acc += diff.row(r).squaredNorm();
  return acc / n;
}

template <typename T>
void adam_update(nn::ParameterStore<T>& p, const nn::ParameterStore<T>& g, AdamState<T>& s, double lr,
                 const AdamOptions& opt) {
  ++s.t;
  const double c1 = 1.0 - std::pow(opt.beta1, double(s.t));
  const double c2 = 1.0 - std::pow(opt.beta2, double(s.t));
  const T b1 = T(opt.beta1), b2 = T(opt.beta2);
  const T step = T(lr / c1), root_c2 = T(std::sqrt(c2)), eps = T(opt.epsilon);
  for (int i = 0; i < p.size(); ++i) {
    auto& w = p.values(i);
    const auto& gi = g.values(i);
    auto& m = s.m.values(i);
    auto& v = s.v.values(i);
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1 - b1) * gi[k];
      v[k] = b2 * v[k] + (1 - b2) * gi[k] * gi[k];
      w[k] -= step * m[k] / (std::sqrt(v[k]) / root_c2 + eps);
    }
  }
}

template <typename T>
double clip_grad_norm(nn::ParameterStore<T>& g, double max_norm) {
  const double norm = g.norm();
  if (max_norm > 0 && norm > max_norm) {
    const T scale = T(max_norm / norm);
    for (int i = 0; i < g.size(); ++i)
      for (auto& x : g.values(i)) x *= scale;
  }
  return norm;
}

template float photometric_loss<float>(const Mat<float>&, const Mat<float>&, Mat<float>*);
template double photometric_loss<double>(const Mat<double>&, const Mat<double>&, Mat<double>*);
template void adam_update<float>(nn::ParameterStore<float>&, const nn::ParameterStore<float>&, AdamState<float>&,
                                 double, const AdamOptions&);
template void adam_update<double>(nn::ParameterStore<double>&, const nn::ParameterStore<double>&, AdamState<double>&,
                                  double, const AdamOptions&);
template double clip_grad_norm<float>(nn::ParameterStore<float>&, double);
template double clip_grad_norm<double>(nn::ParameterStore<double>&, double);

// ---------------------------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'V', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, std::uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw DataError("checkpoint is truncated");
  return v;
}

std::string get_string(std::istream& in, std::size_t limit = std::size_t(1) << 24) {
  const auto n = get<std::uint32_t>(in);
  if (n > limit) throw DataError("checkpoint string length is implausible");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw DataError("checkpoint is truncated");
  return s;
}

void write_values(std::ostream& out, const std::vector<float>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
}

void read_values(std::istream& in, std::vector<float>& v) {
  const auto n = get<std::uint64_t>(in);
  if (n != v.size()) throw DataError("checkpoint array size mismatch");
  if (!in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(float))))
    throw DataError("checkpoint is truncated");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void write_parameters(std::ostream& out, const nn::ParameterStore<float>& p) {
  put<std::uint32_t>(out, std::uint32_t(p.size()));
  for (int i = 0; i < p.size(); ++i) {
    const auto& e = p.entry(i);
    put_string(out, e.name);
    put<std::uint32_t>(out, std::uint32_t(e.shape.size()));
    for (int d : e.shape) put<std::int32_t>(out, d);
    write_values(out, e.values);
  }
}

nn::ParameterStore<float> read_parameters(std::istream& in) {
  nn::ParameterStore<float> p;
  const auto n = get<std::uint32_t>(in);
  if (n > 100000) throw DataError("checkpoint parameter count is implausible");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = get_string(in, 4096);
    const auto nd = get<std::uint32_t>(in);
    if (nd > 8) throw DataError("checkpoint parameter rank is implausible");
    std::vector<int> shape(nd);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = get<std::int32_t>(in);
      if (d < 0 || d > (1 << 28)) throw DataError("checkpoint parameter shape is implausible");
      count *= std::size_t(d);
    }
    if (count > (std::size_t(1) << 30)) throw DataError("checkpoint parameter is implausibly large");
    const int id = p.add(std::move(name), shape);
    read_values(in, p.values(id));
  }
  return p;
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  std::ostringstream body(std::ios::binary);
  body.write(kMagic, 8);
  put<std::uint32_t>(body, kVersion);
  put<std::uint64_t>(body, c.config.model.hash());
  put<std::int64_t>(body, c.step);
  put_string(body, format_config(c.config));
  write_parameters(body, c.params);
  put<std::int64_t>(body, c.adam.t);
  for (int i = 0; i < c.params.size(); ++i) write_values(body, c.adam.m.values(i));
  for (int i = 0; i < c.params.size(); ++i) write_values(body, c.adam.v.values(i));
  put_string(body, c.rng_state);
  const std::string bytes = body.str();
  const std::uint64_t sum = fnv1a(bytes);
  write_atomically(path, [&](std::ostream& out) {
    out.write(bytes.data(), std::streamsize(bytes.size()));
    put<std::uint64_t>(out, sum);
  });
}

Checkpoint load_checkpoint(const fs::path& path, std::uint64_t expected_hash) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw DataError(fmt::format("cannot open checkpoint {}", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 + 4 + 8 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw DataError(fmt::format("{} is not a checkpoint", path.string()));
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, bytes.data() + bytes.size() - 8, 8);
  bytes.resize(bytes.size() - 8);
  if (fnv1a(bytes) != stored_sum) throw DataError(fmt::format("checkpoint {} is corrupt (checksum)", path.string()));

  std::istringstream in(bytes, std::ios::binary);
  in.ignore(8);
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw DataError(fmt::format("checkpoint version {} is not supported", version));
  const auto hash = get<std::uint64_t>(in);
  Checkpoint c;
  c.step = get<std::int64_t>(in);
  c.config = parse_config(get_string(in));
  if (c.config.model.hash() != hash) throw DataError("checkpoint config does not match its stored hash");
  if (expected_hash && hash != expected_hash)
    throw ConfigError(fmt::format("checkpoint model hash {:016x} does not match the configuration ({:016x})", hash,
                                  expected_hash));
  c.params = read_parameters(in);
  c.adam = AdamState<float>::like(c.params);
  c.adam.t = get<std::int64_t>(in);
  for (int i = 0; i < c.params.size(); ++i) read_values(in, c.adam.m.values(i));
  for (int i = 0; i < c.params.size(); ++i) read_values(in, c.adam.v.values(i));
  c.rng_state = get_string(in);
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint has trailing data");
  return c;
}

std::string to_json(const StepRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["scene"] = r.scene;
  j["loss"] = r.loss;
  j["wall_time"] = r.seconds;
  return j.dump();
}

// ---------------------------------------------------------------------------------------------
// Trainer

std::vector<int> training_sources(const SceneRecord& scene, int target, int count) {
  return select_sources(scene, target, count, held_out_views(int(scene.views.size())));
}

std::vector<CameraView> gather_views(const SceneRecord& scene, const std::vector<int>& ids) {
  std::vector<CameraView> out;
  for (int id : ids) out.push_back(scene.views.at(id));
  return out;
}

Trainer::Trainer(TrainConfig config, std::vector<SceneRecord> scenes)
    : cfg_(std::move(config)), scenes_(std::move(scenes)), rng_(cfg_.seed) {
  if (scenes_.empty()) throw DataError("training needs at least one scene");
  for (const auto& s : scenes_) {
    const std::vector<int> held = held_out_views(int(s.views.size()));
    std::vector<int> train;
    for (int i = 0; i < int(s.views.size()); ++i)
      if (std::find(held.begin(), held.end(), i) == held.end()) train.push_back(i);
    if (int(train.size()) < cfg_.source_views + 1)
      throw DataError(fmt::format("scene {} has too few training views", s.id));
    train_views_.push_back(std::move(train));
  }
  std::mt19937_64 init(cfg_.seed ^ 0x5eed5eed5eedull);
  model_ = Model<float>(params_, cfg_.model, &init);
  grads_ = params_.zeros_like();
  adam_ = AdamState<float>::like(params_);
}

StepRecord Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const int si = std::uniform_int_distribution<int>(0, int(scenes_.size()) - 1)(rng_);
  const SceneRecord& scene = scenes_[si];
  const auto& train = train_views_[si];
  const int target = train[std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng_)];
  const std::vector<CameraView> views = gather_views(scene, training_sources(scene, target, cfg_.source_views));
  const CameraView& tv = scene.views[target];

  const int W = scene.valid_width ? scene.valid_width : tv.image.width;
  const int H = scene.valid_height ? scene.valid_height : tv.image.height;
  std::uniform_int_distribution<int> ux(0, W - 1), uy(0, H - 1);
  std::vector<Eigen::Vector2d> pixels(cfg_.rays_per_batch);
  Mat<float> gt(cfg_.rays_per_batch, 3);
  for (int r = 0; r < cfg_.rays_per_batch; ++r) {
    const int x = ux(rng_), y = uy(rng_);
    pixels[r] = Eigen::Vector2d(x, y);
    for (int c = 0; c < 3; ++c) gt(r, c) = tv.image(y, x, c);
  }
  const std::vector<Ray> rays = generate_rays(tv.camera, pixels, tv.near, tv.far);

  const Encoding<float> enc = model_.encode(params_, views, true);
  RayTape<float> tape;
  const RenderOutput<float> out = model_.render(params_, enc, rays, cfg_.jitter ? &rng_ : nullptr, &tape);
  Mat<float> dcolor;
  const float loss = photometric_loss(out.color, gt, &dcolor);
  StepRecord rec;
  rec.step = step_ + 1;
  rec.scene = scene.id;
  rec.loss = loss;
  if (!std::isfinite(loss)) throw NumericError(fmt::format("non-finite loss at step {} on scene {}", rec.step, scene.id));

  grads_.zero();
  model_.backward(params_, enc, tape, dcolor, Vec<float>(), grads_);
  if (cfg_.grad_clip > 0) clip_grad_norm(grads_, cfg_.grad_clip);
  double lr = cfg_.learning_rate;
  if (cfg_.cosine_decay && cfg_.steps > 0)
    lr *= 0.5 * (1 + std::cos(std::numbers::pi * std::min(1.0, double(step_) / double(cfg_.steps))));
  adam_update(params_, grads_, adam_, lr, {cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_epsilon});
  ++step_;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = cfg_;
  c.step = step_;
  c.params = params_;
  c.adam = adam_;
  std::ostringstream ss;
  ss << rng_;
  c.rng_state = ss.str();
  return c;
}

void Trainer::restore(const Checkpoint& c) {
  if (c.config.model.hash() != cfg_.model.hash())
    throw ConfigError("checkpoint was written for a different model configuration");
  if (c.params.size() != params_.size()) throw DataError("checkpoint parameter count does not match the model");
  for (int i = 0; i < params_.size(); ++i)
    if (c.params.name(i) != params_.name(i) || c.params.entry(i).shape != params_.entry(i).shape)
      throw DataError(fmt::format("checkpoint parameter '{}' does not match the model", c.params.name(i)));
  std::istringstream ss(c.rng_state);
  std::mt19937_64 rng;
  if (!(ss >> rng)) throw DataError("checkpoint RNG state is unreadable");
  params_ = c.params;
  adam_ = c.adam;
  rng_ = rng;
  step_ = c.step;
}

std::string Trainer::parameter_norm_table() const {
  std::vector<std::string> groups;
  for (int i = 0; i < params_.size(); ++i) {
    const std::string& n = params_.name(i);
    const std::string g = n.substr(0, n.rfind('.'));
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  std::string s;
  for (const auto& g : groups) s += fmt::format("{:<24} {:.6e}\n", g, params_.norm(g + "."));
  return s;
}

void run_training(const TrainConfig& config, std::vector<SceneRecord> scenes, const TrainRunOptions& opt) {
  fs::create_directories(opt.out_dir);
  Trainer trainer(config, std::move(scenes));
  const fs::path log_path = opt.out_dir / "train_log.jsonl";
  if (!opt.resume.empty()) {
    trainer.restore(load_checkpoint(opt.resume, config.model.hash()));
    // Keep only log records up to the resumed step.
    std::string kept;
    if (std::ifstream in(log_path); in) {
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.contains("step") && j["step"].get<std::int64_t>() <= trainer.steps_done())
          kept += line + "\n";
      }
    }
    write_text_atomically(log_path, kept);
  } else {
    write_text_atomically(log_path, "");
  }
  write_text_atomically(opt.out_dir / "config.txt", format_config(config));
  std::ofstream log(log_path, std::ios::app);
  const std::int64_t stop = opt.stop_after >= 0 ? std::min(opt.stop_after, config.steps) : config.steps;
  while (trainer.steps_done() < stop) {
    StepRecord rec;
    try {
      rec = trainer.step();
    } catch (const NumericError& e) {
      write_text_atomically(opt.out_dir / "nonfinite_dump.txt",
                            fmt::format("{}\nstep: {}\nparameter norms:\n{}", e.what(), trainer.steps_done() + 1,
                                        trainer.parameter_norm_table()));
      throw;
    }
    if (rec.step % config.log_every == 0 || rec.step == stop) {
      log << to_json(rec) << "\n";
      log.flush();
    }
    if (opt.on_step) opt.on_step(rec);
    if (config.checkpoint_every > 0 && rec.step % config.checkpoint_every == 0) {
      const Checkpoint c = trainer.checkpoint();
      save_checkpoint(opt.out_dir / fmt::format("checkpoint_{:06d}.bin", rec.step), c);
      save_checkpoint(opt.out_dir / "checkpoint.bin", c);
    }
  }
  save_checkpoint(opt.out_dir / "checkpoint.bin", trainer.checkpoint());
}

// ---------------------------------------------------------------------------------------------
// Evaluation

Report evaluate(const Model<float>& model, const nn::ParameterStore<float>& params,
                const std::vector<SceneRecord>& scenes, const EvaluationOptions& opt) {
  Report report;
  report.split = to_string(opt.difficulty);
  report.depth_normalization = "absolute depth error divided by the target view's (far - near)";
  for (const auto& scene : scenes) {
    const SplitSpec split = make_difficulty_split(scene, opt.difficulty);
    for (const auto& e : split.entries) {
      const std::vector<CameraView> views = gather_views(scene, e.sources);
      const CameraView& tv = scene.views[e.target];
      const RenderedImage r = render_image(model, params, views, tv.camera, tv.near, tv.far, opt.chunk);
      const EvalWindow win{scene.valid_width, scene.valid_height};
      ReportRow row;
      row.scene = scene.id;
      row.target = e.target;
      row.psnr = psnr(r.color, tv.image, win);
      row.ssim = ssim(r.color, tv.image, win);
      if (scene.has_depths()) {
        const Image& gt = scene.depths[e.target];
        std::vector<unsigned char> mask(std::size_t(gt.width) * gt.height, 0);
        for (int y = 0; y < win.height; ++y)
          for (int x = 0; x < win.width; ++x) mask[std::size_t(y) * gt.width + x] = std::isfinite(gt(y, x, 0)) ? 1 : 0;
        const DepthMetrics dm = depth_metrics(r.depth, gt, mask, {0.01, 0.05}, tv.far - tv.near);
        row.has_depth = true;
        row.abs_err = dm.abs_err;
        row.acc_01 = dm.accuracy[0];
        row.acc_05 = dm.accuracy[1];
      }
      if (!opt.render_dir.empty())
        write_rendering(r, opt.render_dir / scene.id / fmt::format("{:03d}", e.target));
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace svnerf
