#include "svnerf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "svnerf/io.hpp"

namespace svnerf {

namespace fs = std::filesystem;

std::vector<int> held_out_views(int view_count) {
  if (view_count < 6) return {view_count / 2};
  return {view_count / 3, 2 * view_count / 3};
}

namespace {

Image pad_grid(const Image& g, int h, int w) {
  Image out = Image::image(h, w, g.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float* src = g.voxel(0, std::min(y, g.height - 1), std::min(x, g.width - 1));
      std::copy(src, src + g.channels, out.voxel(0, y, x));
    }
  return out;
}

Image crop_grid(const Image& g, int h, int w) {
  Image out = Image::image(h, w, g.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) std::copy(g.voxel(0, y, x), g.voxel(0, y, x) + g.channels, out.voxel(0, y, x));
  return out;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot read {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void pad_scene(SceneRecord& scene, int multiple) {
  if (scene.views.empty()) return;
  const int h0 = scene.views.front().image.height, w0 = scene.views.front().image.width;
  if (scene.valid_width == 0) {
    scene.valid_width = w0;
    scene.valid_height = h0;
  }
  const int h = round_up(h0, multiple), w = round_up(w0, multiple);
  for (auto& v : scene.views) {
    if (v.image.height != h0 || v.image.width != w0) throw DataError("scene images differ in size");
    if (h != h0 || w != w0) v.image = pad_grid(v.image, h, w);
    v.camera.intrinsics.width = w;
    v.camera.intrinsics.height = h;
  }
  for (auto& d : scene.depths)
    if (d.height != h || d.width != w) d = pad_grid(d, h, w);
}

std::vector<std::pair<Camera, std::pair<double, double>>> parse_cameras(const std::string& text) {
  std::vector<std::pair<Camera, std::pair<double, double>>> out;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError(fmt::format("cameras.txt line {}: '{}' is not a number", lineno, tok));
      }
    }
    if (v.size() != 23)
      throw DataError(fmt::format("cameras.txt line {}: expected 23 values, found {}", lineno, v.size()));
    for (double x : v)
      if (!std::isfinite(x)) throw DataError(fmt::format("cameras.txt line {}: non-finite value", lineno));
    Camera cam;
    Eigen::Matrix3d K, R;
    for (int i = 0; i < 9; ++i) K(i / 3, i % 3) = v[i];
    for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = v[9 + i];
    if (std::abs(K(1, 0)) > 1e-12 || std::abs(K(2, 0)) > 1e-12 || std::abs(K(2, 1)) > 1e-12 ||
        std::abs(K(2, 2) - 1) > 1e-12 || std::abs(K(0, 1)) > 1e-9)
      throw CameraError(fmt::format("cameras.txt line {}: K must be an upper-triangular pinhole matrix", lineno));
    cam.intrinsics.fx = K(0, 0);
    cam.intrinsics.fy = K(1, 1);
    cam.intrinsics.cx = K(0, 2);
    cam.intrinsics.cy = K(1, 2);
    cam.pose.R = R;
    cam.pose.t = Eigen::Vector3d(v[18], v[19], v[20]);
    out.push_back({cam, {v[21], v[22]}});
  }
  return out;
}

std::string format_cameras(const SceneRecord& scene) {
  std::string s = "# K(3x3 row-major) R(3x3 row-major) t(3) near far\n";
  for (const auto& v : scene.views) {
    const Eigen::Matrix3d K = v.camera.intrinsics.matrix();
    for (int i = 0; i < 9; ++i) s += fmt::format("{:.17g} ", K(i / 3, i % 3));
    for (int i = 0; i < 9; ++i) s += fmt::format("{:.17g} ", v.camera.pose.R(i / 3, i % 3));
    for (int i = 0; i < 3; ++i) s += fmt::format("{:.17g} ", v.camera.pose.t[i]);
    s += fmt::format("{:.17g} {:.17g}\n", v.near, v.far);
  }
  return s;
}

SceneRecord load_scene(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(fmt::format("scene directory {} does not exist", dir.string()));
  SceneRecord scene;
  scene.id = dir.filename().string();
  std::map<std::string, std::string> meta;
  if (fs::exists(dir / "scene.txt")) {
    std::istringstream lines(read_text(dir / "scene.txt"));
    std::string line;
    while (std::getline(lines, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }
  if (meta.count("id")) scene.id = meta["id"];
  if (meta.count("rig")) scene.rig = parse_rig(meta["rig"]);
  if (meta.count("scale_note")) scene.scale_note = meta["scale_note"];

  const auto cams = parse_cameras(read_text(dir / "cameras.txt"));
  if (cams.size() < 4) throw DataError(fmt::format("scene {} has {} views, need at least 4", scene.id, cams.size()));
  const bool depths = fs::is_directory(dir / "depths");
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CameraView v;
    v.image = read_png(dir / "images" / fmt::format("{:03d}.png", i));
    v.camera = cams[i].first;
    v.camera.intrinsics.width = v.image.width;
    v.camera.intrinsics.height = v.image.height;
    v.near = cams[i].second.first;
    v.far = cams[i].second.second;
    v.validate();
    scene.views.push_back(std::move(v));
    if (depths) {
      Image d = read_grid(dir / "depths" / fmt::format("{:03d}.bin", i));
      if (d.height != scene.views.back().image.height || d.width != scene.views.back().image.width ||
          d.channels != 1)
        throw DataError(fmt::format("depth map {} does not match its image", i));
      scene.depths.push_back(std::move(d));
    }
  }
  pad_scene(scene, 32);
  if (meta.count("valid_width")) scene.valid_width = std::stoi(meta["valid_width"]);
  if (meta.count("valid_height")) scene.valid_height = std::stoi(meta["valid_height"]);
  return scene;
}

void save_scene(const SceneRecord& scene, const fs::path& dir) {
  fs::create_directories(dir / "images");
  const int w = scene.valid_width ? scene.valid_width : scene.views.front().image.width;
  const int h = scene.valid_height ? scene.valid_height : scene.views.front().image.height;
  for (std::size_t i = 0; i < scene.views.size(); ++i)
    write_png(dir / "images" / fmt::format("{:03d}.png", i), crop_grid(scene.views[i].image, h, w));
  if (scene.has_depths()) {
    fs::create_directories(dir / "depths");
    for (std::size_t i = 0; i < scene.depths.size(); ++i)
      write_grid(dir / "depths" / fmt::format("{:03d}.bin", i), crop_grid(scene.depths[i], h, w));
  }
  write_text_atomically(dir / "cameras.txt", format_cameras(scene));
  write_text_atomically(dir / "scene.txt", fmt::format("id={}\nrig={}\nvalid_width={}\nvalid_height={}\nscale_note={}\n",
                                                       scene.id, to_string(scene.rig), w, h, scene.scale_note));
}

std::vector<SceneRecord> load_scenes(const fs::path& root) {
  if (fs::exists(root / "cameras.txt")) return {load_scene(root)};
  if (!fs::is_directory(root)) throw DataError(fmt::format("data directory {} does not exist", root.string()));
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "cameras.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError(fmt::format("no scenes found under {}", root.string()));
  std::vector<SceneRecord> out;
  for (const auto& d : dirs) out.push_back(load_scene(d));
  return out;
}

DtuCamera parse_dtu_camera(const std::string& text, int width, int height, int planes) {
  std::istringstream ss(text);
  std::string tok;
  auto expect = [&](const char* word) {
    if (!(ss >> tok) || tok != word) throw DataError(fmt::format("DTU cam file: expected '{}'", word));
  };
  auto number = [&] {
    double v;
    if (!(ss >> v)) throw DataError("DTU cam file: truncated");
    return v;
  };
  expect("extrinsic");
  Eigen::Matrix4d E;
  for (int i = 0; i < 16; ++i) E(i / 4, i % 4) = number();
  expect("intrinsic");
  Eigen::Matrix3d K;
  for (int i = 0; i < 9; ++i) K(i / 3, i % 3) = number();
  const double dmin = number(), interval = number();
  DtuCamera c;
  c.camera.intrinsics = {K(0, 0), K(1, 1), K(0, 2), K(1, 2), width, height};
  c.camera.pose.R = E.topLeftCorner<3, 3>();
  c.camera.pose.t = E.topRightCorner<3, 1>();
  c.camera.pose.validate();
  c.near = dmin;
  c.far = dmin + interval * (planes - 1);
  return c;
}

void convert_dtu_scene(const fs::path& src, const fs::path& dst, const std::string& id) {
  auto list = [](const fs::path& d, const std::string& suffix) {
    std::vector<fs::path> out;
    if (!fs::is_directory(d)) throw DataError(fmt::format("{} is not a directory", d.string()));
    for (const auto& e : fs::directory_iterator(d))
      if (e.path().string().ends_with(suffix)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto images = list(src / "images", ".png");
  const auto cams = list(src / "cams", "_cam.txt");
  if (images.size() != cams.size() || images.empty())
    throw DataError(fmt::format("{}: {} images but {} cam files", src.string(), images.size(), cams.size()));
  SceneRecord scene;
  scene.id = id;
  scene.scale_note = "DTU millimetres";
  for (std::size_t i = 0; i < images.size(); ++i) {
    CameraView v;
    v.image = read_png(images[i]);
    const DtuCamera c = parse_dtu_camera(read_text(cams[i]), v.image.width, v.image.height);
    v.camera = c.camera;
    v.near = c.near;
    v.far = c.far;
    v.validate();
    scene.views.push_back(std::move(v));
  }
  save_scene(scene, dst);
}

std::vector<int> select_sources(const SceneRecord& scene, int target, int count, const std::vector<int>& excluded) {
  const int n = int(scene.views.size());
  if (target < 0 || target >= n) throw DomainError(fmt::format("target view {} out of range", target));
  const Eigen::Vector3d c = scene.views[target].camera.pose.center();
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    if (i == target || std::find(excluded.begin(), excluded.end(), i) != excluded.end()) continue;
    cand.push_back({(scene.views[i].camera.pose.center() - c).norm(), i});
  }
  if (int(cand.size()) < count)
    throw DataError(fmt::format("only {} candidate sources for target {}, need {}", cand.size(), target, count));
  std::sort(cand.begin(), cand.end());
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(cand[i].second);
  return out;
}

Difficulty parse_difficulty(const std::string& name) {
  if (name == "small") return Difficulty::Small;
  if (name == "medium") return Difficulty::Medium;
  if (name == "large") return Difficulty::Large;
  throw ConfigError(fmt::format("unknown difficulty '{}'", name));
}

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Small: return "small";
    case Difficulty::Medium: return "medium";
    case Difficulty::Large: return "large";
  }
  return "?";
}

int difficulty_stride(Difficulty d) {
  switch (d) {
    case Difficulty::Small: return 1;
    case Difficulty::Medium: return 2;
    case Difficulty::Large: return 4;
  }
  return 1;
}

RigKind parse_rig(const std::string& name) {
  if (name == "line") return RigKind::Line;
  if (name == "ring") return RigKind::Ring;
  throw ConfigError(fmt::format("unknown rig '{}'", name));
}

std::string to_string(RigKind r) { return r == RigKind::Ring ? "ring" : "line"; }

SplitSpec make_difficulty_split(const SceneRecord& scene, Difficulty level, int count,
                                std::optional<std::vector<int>> targets) {
  const int n = int(scene.views.size());
  const std::vector<int> held = held_out_views(n);
  SplitSpec split;
  split.difficulty = level;
  const int s = difficulty_stride(level);
  for (int t : targets ? *targets : held) {
    if (t < 0 || t >= n) throw DataError(fmt::format("split target {} out of range", t));
    SplitEntry e;
    e.target = t;
    for (int k = 1; int(e.sources.size()) < count && k < n; ++k) {
      for (int sign : {-1, 1}) {
        int id = t + sign * k * s;
        if (scene.rig == RigKind::Ring) id = ((id % n) + n) % n;
        if (id < 0 || id >= n || id == t) continue;
        if (std::find(held.begin(), held.end(), id) != held.end()) continue;
        if (std::find(e.sources.begin(), e.sources.end(), id) != e.sources.end()) continue;
        if (int(e.sources.size()) < count) e.sources.push_back(id);
      }
    }
    if (int(e.sources.size()) < count)
      throw DataError(fmt::format("not enough views for a {} split of target {}", to_string(level), t));
    split.entries.push_back(std::move(e));
  }
  return split;
}

namespace {

struct Texture {
  Eigen::Vector3d base;
  std::array<Eigen::Vector3d, 4> amplitude;
  std::array<Eigen::Vector2d, 4> frequency;
  std::array<double, 4> phase;

  Eigen::Vector3d at(double a, double b) const {
    Eigen::Vector3d c = base;
    for (int j = 0; j < 4; ++j)
      c += amplitude[j] * std::sin(2 * std::numbers::pi * (frequency[j].x() * a + frequency[j].y() * b) + phase[j]);
    return c.cwiseMax(0.0).cwiseMin(1.0);
  }
};

struct Box {
  Eigen::Vector3d lo, hi;
  Texture texture;
};

struct SyntheticWorld {
  double wall_z = 4.0;
  Texture wall;
  std::vector<Box> boxes;
};

Texture random_texture(std::mt19937_64& rng, double max_freq) {
  std::uniform_real_distribution<double> u(0, 1);
  Texture t;
  t.base = Eigen::Vector3d(0.25 + 0.5 * u(rng), 0.25 + 0.5 * u(rng), 0.25 + 0.5 * u(rng));
  for (int j = 0; j < 4; ++j) {
    t.amplitude[j] = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 0.15;
    const double f = 0.5 + (max_freq - 0.5) * u(rng);
    const double ang = 2 * std::numbers::pi * u(rng);
    t.frequency[j] = f * Eigen::Vector2d(std::cos(ang), std::sin(ang));
    t.phase[j] = 2 * std::numbers::pi * u(rng);
  }
  return t;
}

SyntheticWorld make_world(std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  std::uniform_real_distribution<double> u(0, 1);
  SyntheticWorld w;
  w.wall = random_texture(rng, 2.0);
  const int boxes = 3;
  for (int b = 0; b < boxes; ++b) {
    Box box;
    const Eigen::Vector3d center(-0.7 + 1.4 * (b + 0.5) / boxes + 0.15 * (u(rng) - 0.5), -0.5 + 1.0 * u(rng),
                                 2.3 + 0.7 * u(rng));
    const Eigen::Vector3d half(0.12 + 0.1 * u(rng), 0.15 + 0.2 * u(rng), 0.1 + 0.1 * u(rng));
    box.lo = center - half;
    box.hi = center + half;
    box.texture = random_texture(rng, 3.0);
    w.boxes.push_back(box);
  }
  return w;
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

Hit trace(const SyntheticWorld& w, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  Hit hit;
  const Eigen::Vector3d light = Eigen::Vector3d(0.4, -0.5, -1.0).normalized();
  if (d.z() > 1e-9) {
    const double t = (w.wall_z - o.z()) / d.z();
    if (t > 0) {
      const Eigen::Vector3d p = o + t * d;
      hit.t = t;
      hit.color = w.wall.at(p.x(), p.y());
    }
  }
  for (const Box& b : w.boxes) {
    double t0 = 0, t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    bool ok = true;
    for (int a = 0; a < 3 && ok; ++a) {
      if (std::abs(d[a]) < 1e-12) {
        if (o[a] < b.lo[a] || o[a] > b.hi[a]) ok = false;
        continue;
      }
      double ta = (b.lo[a] - o[a]) / d[a], tb = (b.hi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      if (ta > t0) {
        t0 = ta;
        axis = a;
      }
      t1 = std::min(t1, tb);
      if (t0 > t1) ok = false;
    }
    if (!ok || axis < 0 || t0 >= hit.t) continue;
    const Eigen::Vector3d p = o + t0 * d;
    Eigen::Vector3d n = Eigen::Vector3d::Zero();
    n[axis] = d[axis] > 0 ? -1 : 1;
    const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
    const double shade = 0.65 + 0.35 * std::max(0.0, n.dot(-light));
    hit.t = t0;
    hit.color = (b.texture.at(p[ua], p[va]) * shade).cwiseMin(1.0);
  }
  return hit;
}

}  // namespace

SceneRecord generate_synthetic_scene(const SyntheticSpec& spec) {
  if (spec.views < 4) throw DomainError("a synthetic scene needs at least 4 views");
  if (spec.width < 8 || spec.height < 8) throw DomainError("synthetic images must be at least 8x8");
  const SyntheticWorld world = make_world(spec.seed);
  SceneRecord scene;
  scene.id = fmt::format("synthetic_{:04d}", spec.seed);
  scene.rig = spec.rig;
  scene.scale_note = "synthetic units (back wall at z = 4)";

  CameraIntrinsics K;
  const double half_fov = 25.0 * std::numbers::pi / 180.0;
  K.fx = K.fy = 0.5 * spec.width / std::tan(half_fov);
  K.cx = (spec.width - 1) / 2.0;
  K.cy = (spec.height - 1) / 2.0;
  K.width = spec.width;
  K.height = spec.height;

  const int ss = std::max(1, spec.supersample);
  for (int i = 0; i < spec.views; ++i) {
    Camera cam;
    cam.intrinsics = K;
    if (spec.rig == RigKind::Line) {
      const Eigen::Vector3d eye((i - (spec.views - 1) / 2.0) * spec.spacing, 0, 0);
      cam.pose = CameraPose::look_at(eye, eye + Eigen::Vector3d::UnitZ());
    } else {
      const double r = spec.spacing * spec.views / (2 * std::numbers::pi);
      const double th = 2 * std::numbers::pi * i / spec.views;
      const Eigen::Vector3d eye(r * std::cos(th), r * std::sin(th), 0);
      cam.pose = CameraPose::look_at(eye, Eigen::Vector3d(0, 0, 3.0));
    }
    const Eigen::Vector3d o = cam.pose.center();
    const Eigen::Vector3d axis = cam.pose.R.row(2).transpose();
    CameraView v;
    v.camera = cam;
    v.image = Image::image(spec.height, spec.width, 3);
    Image depth = Image::image(spec.height, spec.width, 1);
    double zmin = std::numeric_limits<double>::infinity(), dmax = 0;
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const Eigen::Vector2d px(x + (sx + 0.5) / ss - 0.5, y + (sy + 0.5) / ss - 0.5);
            const Eigen::Vector3d d = (cam.unproject(px, 1.0) - o).normalized();
            acc += trace(world, o, d).color;
          }
        acc /= double(ss * ss);
        for (int c = 0; c < 3; ++c) v.image(y, x, c) = float(acc[c]);
        const Eigen::Vector3d d = (cam.unproject(Eigen::Vector2d(x, y), 1.0) - o).normalized();
        const Hit h = trace(world, o, d);
        const double z = h.t * d.dot(axis);
        depth(y, x, 0) = float(z);
        zmin = std::min(zmin, z);
        dmax = std::max(dmax, h.t);
      }
    // near bounds the camera depth of every hit and far bounds the ray distance of every hit, so both
    // readings of [near, far] cover the scene.
    v.near = 0.95 * zmin;
    v.far = 1.05 * dmax;
    scene.views.push_back(std::move(v));
    scene.depths.push_back(std::move(depth));
  }
  scene.valid_width = spec.width;
  scene.valid_height = spec.height;
  pad_scene(scene, 32);
  return scene;
}

}  // namespace svnerf
