#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "support.hpp"
#include "svnerf/data.hpp"
#include "svnerf/io.hpp"

using namespace svnerf;
using svtest::scratch;
namespace fs = std::filesystem;

namespace {

SceneRecord line_rig(int n, double spacing) {
  SceneRecord s;
  s.id = "line";
  for (int i = 0; i < n; ++i) {
    CameraView v;
    v.camera.intrinsics = {10, 10, 3.5, 3.5, 8, 8};
    v.camera.pose.t = Eigen::Vector3d(-spacing * i, 0, 0);
    v.image = Image::image(8, 8, 3, 0.5f);
    s.views.push_back(v);
  }
  s.valid_width = s.valid_height = 8;
  return s;
}

const SceneRecord& synthetic() {
  static const SceneRecord s = [] {
    SyntheticSpec spec;
    spec.seed = 3;
    return generate_synthetic_scene(spec);
  }();
  return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("held-out views") {
  CHECK(held_out_views(16) == std::vector<int>{5, 10});
  CHECK(held_out_views(9) == std::vector<int>{3, 6});
}

TEST_CASE("padding to a multiple of 32") {
  SceneRecord s;
  CameraView v;
  v.camera.intrinsics = {300, 300, 199.5, 149.5, 400, 300};
  v.image = Image::image(300, 400, 3, 0.25f);
  v.image(299, 399, 1) = 0.75f;
  s.views.push_back(v);
  s.depths.push_back(Image::image(300, 400, 1, 2.0f));
  pad_scene(s);
  CHECK(s.views[0].image.height == 320);
  CHECK(s.views[0].image.width == 416);
  CHECK(s.depths[0].height == 320);
  CHECK(s.valid_width == 400);
  CHECK(s.valid_height == 300);
  CHECK(s.views[0].image(319, 415, 1) == 0.75f);
  CHECK(s.views[0].camera.intrinsics.width == 416);
  CHECK(s.views[0].camera.intrinsics.cx == 199.5);
}

TEST_CASE("scene round trip") {
  const fs::path dir = scratch("scene");
  const SceneRecord& s = synthetic();
  save_scene(s, dir / "a");
  const SceneRecord back = load_scene(dir / "a");
  REQUIRE(back.views.size() == s.views.size());
  CHECK(back.id == s.id);
  CHECK(back.rig == s.rig);
  CHECK(back.valid_width == 64);
  CHECK(back.valid_height == 64);
  for (std::size_t i = 0; i < s.views.size(); ++i) {
    const Camera &a = s.views[i].camera, &b = back.views[i].camera;
    CHECK((a.intrinsics.matrix() - b.intrinsics.matrix()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((a.pose.R - b.pose.R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((a.pose.t - b.pose.t).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(s.views[i].near - back.views[i].near) < 1e-9);
    CHECK(std::abs(s.views[i].far - back.views[i].far) < 1e-9);
    CHECK(back.depths[i].data == s.depths[i].data);
    for (std::size_t k = 0; k < s.views[i].image.data.size(); ++k)
      REQUIRE(std::abs(back.views[i].image.data[k] - s.views[i].image.data[k]) <= 0.5f / 255 + 1e-6f);
  }
  // Second save of the loaded scene reproduces the cameras byte for byte.
  save_scene(back, dir / "b");
  std::ifstream ca(dir / "a" / "cameras.txt"), cb(dir / "b" / "cameras.txt");
  std::stringstream sa, sb;
  sa << ca.rdbuf();
  sb << cb.rdbuf();
  CHECK(sa.str() == sb.str());
  fs::remove_all(dir);
}

TEST_CASE("loader rejects malformed input") {
  const fs::path dir = scratch("bad");
  CHECK_THROWS_AS(load_scene(dir / "missing"), DataError);
  save_scene(synthetic(), dir / "s");
  {
    std::ofstream out(dir / "s" / "cameras.txt");
    out << "1 2 3\n";
  }
  CHECK_THROWS_AS(load_scene(dir / "s"), DataError);
  CHECK_THROWS_AS(parse_cameras("60 0 31.5 0 60 31.5 0 0 1  1 0 0 0 1 0 0 0 1  0 0 0  nan 5\n"), DataError);
  SceneRecord skew = synthetic();
  skew.views[3].camera.pose.R(0, 0) = 2;
  save_scene(skew, dir / "skew");
  CHECK_THROWS_AS(load_scene(dir / "skew"), CameraError);
  {
    std::ofstream out(dir / "junk.png", std::ios::binary);
    out << "not a png";
  }
  CHECK_THROWS_AS(read_png(dir / "junk.png"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("generator output passes the loader's validation") {
  const SceneRecord& s = synthetic();
  for (const auto& v : s.views) {
    CHECK_NOTHROW(v.validate());
    CHECK(std::all_of(v.image.data.begin(), v.image.data.end(), [](float x) { return std::isfinite(x) && x >= 0 && x <= 1; }));
  }
  for (const auto& d : s.depths)
    CHECK(std::all_of(d.data.begin(), d.data.end(), [](float x) { return std::isfinite(x) && x > 0; }));
}

TEST_CASE("png and grid files") {
  const fs::path dir = scratch("io");
  std::mt19937_64 rng(1);
  Image img = svtest::random_grid<float>(rng, 1, 5, 7, 3, 0, 1);
  write_png(dir / "a.png", img);
  const Image back = read_png(dir / "a.png");
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 255 + 1e-6f);
  const Image g = svtest::random_grid<float>(rng, 1, 4, 6, 2, -100, 100);
  write_grid(dir / "g.bin", g);
  CHECK(read_grid(dir / "g.bin").data == g.data);
  std::size_t files = 0;
  for (auto& e : fs::directory_iterator(dir)) files += e.is_regular_file();
  CHECK(files == 2);  // no temporaries left behind
  std::ofstream(dir / "g.bin", std::ios::binary | std::ios::trunc) << "SVGRID01";
  CHECK_THROWS_AS(read_grid(dir / "g.bin"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("source selection") {
  const SceneRecord s = line_rig(10, 1.0);
  CHECK(select_sources(s, 5, 3) == std::vector<int>{4, 6, 3});
  CHECK(select_sources(s, 5, 3, {4}) == std::vector<int>{6, 3, 7});

  SceneRecord dup = line_rig(6, 1.0);
  dup.views[4].camera = dup.views[2].camera;  // view 4 sits exactly where view 2 does
  // Exclusion is by id: the target never appears, a co-located other view does.
  CHECK(select_sources(dup, 2, 2) == std::vector<int>{4, 1});

  const SceneRecord& syn = synthetic();
  for (int t = 0; t < 16; ++t) {
    std::vector<int> ids;
    for (int i = 0; i < 16; ++i)
      if (i != t) ids.push_back(i);
    const Eigen::Vector3d c = syn.views[t].camera.pose.center();
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
      return (syn.views[a].camera.pose.center() - c).norm() < (syn.views[b].camera.pose.center() - c).norm();
    });
    ids.resize(4);
    CHECK(select_sources(syn, t, 4) == ids);
    CHECK(select_sources(syn, t, 4) == select_sources(syn, t, 4));
  }
  CHECK_THROWS(select_sources(s, 5, 10));
}

TEST_CASE("difficulty splits") {
  const SceneRecord& s = synthetic();
  double gaps[3];
  int level = 0;
  for (Difficulty d : {Difficulty::Small, Difficulty::Medium, Difficulty::Large}) {
    const SplitSpec a = make_difficulty_split(s, d), b = make_difficulty_split(s, d);
    REQUIRE(a.entries.size() == 2);
    double gap = 0;
    int n = 0;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      CHECK(a.entries[i].target == b.entries[i].target);
      CHECK(a.entries[i].sources == b.entries[i].sources);
      for (int src : a.entries[i].sources) {
        CHECK(src != 5);
        CHECK(src != 10);
        gap += (s.views[src].camera.pose.center() - s.views[a.entries[i].target].camera.pose.center()).norm();
        ++n;
      }
    }
    gaps[level++] = gap / n;
  }
  CHECK(gaps[0] < gaps[1]);
  CHECK(gaps[1] < gaps[2]);
  CHECK(gaps[2] / gaps[0] == doctest::Approx(4.0).epsilon(0.02));
  CHECK(make_difficulty_split(s, Difficulty::Small).entries[0].sources == std::vector<int>{4, 6, 3});
  CHECK(make_difficulty_split(s, Difficulty::Large).entries[0].sources == std::vector<int>{1, 9, 13});

  SyntheticSpec ring;
  ring.rig = RigKind::Ring;
  ring.supersample = 1;
  ring.width = ring.height = 16;
  const SceneRecord r = generate_synthetic_scene(ring);
  CHECK(make_difficulty_split(r, Difficulty::Large).entries[1].sources == std::vector<int>{6, 14, 2});
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.seed = 3;
  const SceneRecord again = generate_synthetic_scene(spec);
  const SceneRecord& s = synthetic();
  for (std::size_t i = 0; i < s.views.size(); ++i) {
    CHECK(again.views[i].image.data == s.views[i].image.data);
    CHECK(again.depths[i].data == s.depths[i].data);
  }
  spec.seed = 4;
  CHECK(generate_synthetic_scene(spec).views[0].image.data != s.views[0].image.data);

  SUBCASE("back wall depth is constant for the fronto-parallel rig") {
    // Line rig cameras look straight down +z, so every wall pixel has z-depth 4.
    for (int v : {7, 8}) {
      const Image& d = s.depths[v];
      int wall = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (d(y, x, 0) > 3.3f) {
            CHECK(d(y, x, 0) == doctest::Approx(4.0).epsilon(1e-6));
            ++wall;
          }
      CHECK(wall > 1000);
    }
  }
  SUBCASE("photo-consistency through ground-truth depth") {
    for (auto [a, b] : {std::pair{6, 7}, std::pair{7, 9}, std::pair{2, 3}}) {
      const CameraView &va = s.views[a], &vb = s.views[b];
      std::vector<double> errs;
      for (int y = 2; y < 62; ++y)
        for (int x = 2; x < 62; ++x) {
          const double z = s.depths[a](y, x, 0);
          // Skip depth edges, where the supersampled color mixes surfaces.
          bool flat = true;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) flat &= std::abs(s.depths[a](y + dy, x + dx, 0) - z) < 0.02;
          if (!flat) continue;
          const Eigen::Vector3d X = va.camera.unproject({double(x), double(y)}, z);
          const Reprojection rp = reproject_point(X, vb.camera);
          if (!rp.in_bounds || rp.pixel.x() < 2 || rp.pixel.y() < 2 || rp.pixel.x() > 61 || rp.pixel.y() > 61) continue;
          float bd;
          bilinear_lookup(s.depths[b], rp.pixel.x(), rp.pixel.y(), &bd);
          if (std::abs(bd - vb.camera.pose.to_camera(X).z()) > 0.02) continue;  // occluded in b
          float cb[3];
          bilinear_lookup(vb.image, rp.pixel.x(), rp.pixel.y(), cb);
          double e = 0;
          for (int c = 0; c < 3; ++c) e = std::max(e, double(std::abs(cb[c] - va.image(y, x, c))));
          errs.push_back(e);
        }
      REQUIRE(errs.size() > 2000);
      std::sort(errs.begin(), errs.end());
      CHECK(errs[errs.size() / 2] < 0.01);
      CHECK(errs[errs.size() * 95 / 100] < 0.04);
    }
  }
}

TEST_CASE("DTU camera files") {
  const std::string text =
      "extrinsic\n1 0 0 0.5\n0 1 0 -0.25\n0 0 1 2\n0 0 0 1\n\nintrinsic\n361.5 0 82.9\n0 360.4 66.4\n0 0 1\n\n425 2.5\n";
  const DtuCamera c = parse_dtu_camera(text, 160, 128);
  CHECK(c.camera.intrinsics.fx == 361.5);
  CHECK(c.camera.intrinsics.cy == 66.4);
  CHECK(c.camera.pose.t.x() == 0.5);
  CHECK(c.near == 425);
  CHECK(c.far == doctest::Approx(425 + 2.5 * 191));
  CHECK_THROWS_AS(parse_dtu_camera("extrinsic\n1 0 0\n", 160, 128), DataError);
}

}
