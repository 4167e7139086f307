#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "svnerf/geometry.hpp"

namespace svnerf {

enum class RigKind { Line, Ring };

struct SceneRecord {
  std::string id;
  std::vector<CameraView> views;
  std::vector<Image> depths;  // optional, camera-frame z-depth per pixel (empty when absent)
  std::string scale_note = "scene units";
  RigKind rig = RigKind::Line;
  // Image size before padding; pixels outside [0, valid_width) x [0, valid_height) are padding.
  int valid_width = 0;
  int valid_height = 0;

  bool has_depths() const { return !depths.empty(); }
};

// Views held out of training entirely: indices n/3 and 2n/3.
std::vector<int> held_out_views(int view_count);

// Pads (edge-replicate, right and bottom) every image and depth map to a multiple of `multiple`.
void pad_scene(SceneRecord& scene, int multiple = 32);

// Directory layout: images/NNN.png, cameras.txt, optional depths/NNN.bin (grid files) and an optional
// scene.txt with key=value metadata (id, rig, valid_width, valid_height, scale_note).
SceneRecord load_scene(const std::filesystem::path& dir);
void save_scene(const SceneRecord& scene, const std::filesystem::path& dir);
// Scene directories below `root` (or `root` itself when it is a scene), sorted by name.
std::vector<SceneRecord> load_scenes(const std::filesystem::path& root);

// cameras.txt: one line per view with K (row-major), R (row-major), t, near, far; '#' starts a comment.
std::vector<std::pair<Camera, std::pair<double, double>>> parse_cameras(const std::string& text);
std::string format_cameras(const SceneRecord& scene);

// Reads a DTU/MVSNet-style cam file ("extrinsic" 4x4 world-to-camera, "intrinsic" 3x3, then depth_min and
// depth_interval). far = depth_min + interval * (planes - 1).
struct DtuCamera {
  Camera camera;
  double near = 0;
  double far = 0;
};
DtuCamera parse_dtu_camera(const std::string& text, int width, int height, int planes = 192);
// Converts a directory with images/*.png and cams/*_cam.txt (sorted by name) into the native layout.
void convert_dtu_scene(const std::filesystem::path& src, const std::filesystem::path& dst, const std::string& id);

// The `count` views whose centers are nearest to the target's, ties broken by lower id. `excluded` views and
// the target itself are never chosen.
std::vector<int> select_sources(const SceneRecord& scene, int target, int count,
                                const std::vector<int>& excluded = {});

enum class Difficulty { Small, Medium, Large };
Difficulty parse_difficulty(const std::string& name);
std::string to_string(Difficulty d);
int difficulty_stride(Difficulty d);

struct SplitEntry {
  int target = 0;
  std::vector<int> sources;
};

struct SplitSpec {
  Difficulty difficulty = Difficulty::Small;
  std::vector<SplitEntry> entries;
};

// Sources for target t at stride s are the first `count` valid ids among t-s, t+s, t-2s, t+2s, ...
// (ids wrap around on a ring rig). Targets default to the held-out views.
SplitSpec make_difficulty_split(const SceneRecord& scene, Difficulty level, int count = 3,
                                std::optional<std::vector<int>> targets = std::nullopt);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  RigKind rig = RigKind::Line;
  int views = 16;
  int width = 64;
  int height = 64;
  double spacing = 0.1;   // distance between neighbouring camera centers
  int supersample = 3;    // per-axis sub-pixel samples for the color image
};

// Textured back wall plus a few boxes, rendered analytically with exact depth maps.
SceneRecord generate_synthetic_scene(const SyntheticSpec& spec);

RigKind parse_rig(const std::string& name);
std::string to_string(RigKind r);

}  // namespace svnerf
