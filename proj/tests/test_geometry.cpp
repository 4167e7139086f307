#include <doctest.h>

#include "support.hpp"

using namespace svnerf;
using svtest::uniform;

TEST_SUITE("geometry") {

TEST_CASE("homography of a camera with itself is the identity") {
  std::mt19937_64 rng(1);
  const Camera c = svtest::random_camera(rng);
  const Eigen::Matrix3d H = homography_matrix(c, c, Eigen::Vector3d::UnitZ(), 2.5);
  CHECK((H - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("homography for a pure x translation maps the principal point like direct projection") {
  Camera ref;
  ref.intrinsics = {60, 60, 31.5, 23.5, 64, 48};
  Camera src = ref;
  src.pose.t = Eigen::Vector3d(-0.1, 0, 0);  // center at x = +0.1
  const Eigen::Matrix3d H = homography_matrix(src, ref, Eigen::Vector3d::UnitZ(), 2.0);
  const Eigen::Vector3d h = H * Eigen::Vector3d(31.5, 23.5, 1);
  const Eigen::Vector2d direct = src.project(ref.unproject({31.5, 23.5}, 2.0));
  CHECK(std::abs(h.x() / h.z() - direct.x()) < 1e-5);
  CHECK(std::abs(h.y() / h.z() - direct.y()) < 1e-5);
  CHECK(std::abs(h.x() / h.z() - (31.5 - 60 * 0.1 / 2.0)) < 1e-9);
}

TEST_CASE("homography agrees with the unproject/transform/project oracle") {
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int pair = 0; pair < 20; ++pair) {
    const Camera ref = svtest::random_camera(rng), src = svtest::random_camera(rng);
    for (int d = 0; d < 5; ++d) {
      const double z = uniform(rng, 1.0, 6.0);
      Eigen::Vector3d n = Eigen::Vector3d::UnitZ();
      if (d % 2) n = Eigen::Vector3d(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), 1).normalized();
      const Eigen::Matrix3d H = homography_matrix(src, ref, n, z);
      for (int k = 0; k < 50; ++k) {
        const Eigen::Vector2d px(uniform(rng, 0, 63), uniform(rng, 0, 47));
        const Eigen::Vector3d h = H * Eigen::Vector3d(px.x(), px.y(), 1);
        const Eigen::Vector2d o = svtest::plane_transfer_oracle(src, ref, n, z, px);
        worst = std::max(worst, (Eigen::Vector2d(h.x() / h.z(), h.y() / h.z()) - o).norm());
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("homography rejects non-positive plane depth") {
  Camera c;
  c.intrinsics = {50, 50, 10, 10, 21, 21};
  CHECK_THROWS_AS(homography_matrix(c, c, Eigen::Vector3d::UnitZ(), 0.0), DomainError);
}

TEST_CASE("camera validation") {
  Camera c;
  c.intrinsics = {0, 50, 10, 10, 21, 21};
  CHECK_THROWS_AS(c.intrinsics.validate(), CameraError);
  c.intrinsics.fx = 50;
  c.pose.R(0, 0) = 2;
  CHECK_THROWS_AS(c.pose.validate(), CameraError);
  c.pose.R = -Eigen::Matrix3d::Identity();
  CHECK_THROWS_AS(c.pose.validate(), CameraError);
}

TEST_CASE("warp with the identity is exact") {
  std::mt19937_64 rng(3);
  const Grid<float> f = svtest::random_grid<float>(rng, 1, 12, 16, 5);
  const Grid<float> w = warp_feature_map(f, Eigen::Matrix3d::Identity());
  CHECK(w.data == f.data);
}

TEST_CASE("warp by an integer translation shifts with the left edge replicated") {
  std::mt19937_64 rng(4);
  const Grid<double> f = svtest::random_grid<double>(rng, 1, 6, 10, 2);
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
  H(0, 2) = -3;  // out(x) = src(x - 3)
  const Grid<double> w = warp_feature_map(f, H);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 10; ++x)
      for (int c = 0; c < 2; ++c) CHECK(w(y, x, c) == f(y, std::max(x - 3, 0), c));
}

TEST_CASE("warp of a constant map is constant") {
  std::mt19937_64 rng(5);
  const Grid<double> f(1, 9, 11, 3, 0.37);
  for (int t = 0; t < 10; ++t) {
    Eigen::Matrix3d H = Eigen::Matrix3d::Identity() + 0.1 * svtest::random_mat<double>(rng, 3, 3);
    const Grid<double> w = warp_feature_map(f, H, 7, 13);
    for (double v : w.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
}

TEST_CASE("NDC endpoints and round trip") {
  std::mt19937_64 rng(6);
  const Camera c = svtest::random_camera(rng);
  const double near = 1.5, far = 7.0;
  const auto& K = c.intrinsics;
  const Eigen::Vector3d a = to_ndc(c.unproject({K.cx, K.cy}, near), c, near, far);
  CHECK(a.x() == doctest::Approx(K.cx / (K.width - 1)));
  CHECK(a.y() == doctest::Approx(K.cy / (K.height - 1)));
  CHECK(std::abs(a.z()) < 1e-12);
  CHECK(to_ndc(c.unproject({K.cx, K.cy}, far), c, near, far).z() == doctest::Approx(1.0));
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d x =
        c.unproject({uniform(rng, 0, K.width - 1), uniform(rng, 0, K.height - 1)}, uniform(rng, near, far));
    worst = std::max(worst, (from_ndc(to_ndc(x, c, near, far), c, near, far) - x).norm());
  }
  CHECK(worst < 1e-5);
  CHECK_THROWS_AS(to_ndc(c.pose.to_world({0, 0, -1}), c, near, far), BehindCameraError);
}

TEST_CASE("reprojection") {
  std::mt19937_64 rng(7);
  const Camera c = svtest::random_camera(rng);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector2d px(uniform(rng, 0, 63), uniform(rng, 0, 47));
    const Reprojection r = reproject_point(c.unproject(px, uniform(rng, 0.1, 20)), c);
    CHECK(r.in_bounds);
    worst = std::max(worst, (r.pixel - px).norm());
  }
  CHECK(worst < 1e-5);
  CHECK_FALSE(reproject_point(c.pose.to_world({0.1, 0.2, -3}), c).in_bounds);

  // Checkerboard corners on the plane z = 3 seen by two cameras, projected by hand.
  Camera a, b;
  a.intrinsics = b.intrinsics = {80, 80, 32, 24, 65, 49};
  b.pose.t = Eigen::Vector3d(-0.2, 0, 0);
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) {
      const Eigen::Vector3d x(0.25 * i, 0.25 * j, 3.0);
      const Reprojection ra = reproject_point(x, a), rb = reproject_point(x, b);
      CHECK(std::abs(ra.pixel.x() - (32 + 80 * x.x() / 3)) < 1e-5);
      CHECK(std::abs(ra.pixel.y() - (24 + 80 * x.y() / 3)) < 1e-5);
      CHECK(std::abs(rb.pixel.x() - (32 + 80 * (x.x() - 0.2) / 3)) < 1e-5);
      CHECK(std::abs(rb.pixel.y() - (24 + 80 * x.y() / 3)) < 1e-5);
    }
}

TEST_CASE("generated rays") {
  std::mt19937_64 rng(8);
  const Camera c = svtest::random_camera(rng);
  const auto& K = c.intrinsics;
  const std::vector<Eigen::Vector2d> center = {{K.cx, K.cy}};
  const Ray r = generate_rays(c, center, 1, 5).front();
  CHECK((r.direction - c.pose.R.transpose() * Eigen::Vector3d::UnitZ()).norm() < 1e-12);
  CHECK((r.origin - c.pose.center()).norm() < 1e-12);

  const std::vector<Eigen::Vector2d> adjacent = {{10, 20}, {11, 20}};
  const auto pair = generate_rays(c, adjacent, 1, 5);
  const Eigen::Vector3d a = c.pose.R * pair[0].direction, b = c.pose.R * pair[1].direction;
  const Eigen::Vector3d ua = a / a.z(), ub = b / b.z();
  CHECK(std::abs(ua.y() - ub.y()) < 1e-12);
  CHECK(std::abs(ub.x() - ua.x() - 1 / K.fx) < 1e-12);

  const std::vector<Eigen::Vector2d> corners = {{0, 0}, {63, 0}, {0, 47}, {63, 47}};
  const auto rays = generate_rays(c, corners, 1, 5);
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d p = c.unproject(corners[i], 2.0);
    const Eigen::Vector3d oracle = (p - c.pose.center()).normalized();
    CHECK((rays[i].direction - oracle).norm() < 1e-6);
  }
}

TEST_CASE("ray samples") {
  Ray r;
  r.origin = {0.1, 0.2, 0.3};
  r.direction = Eigen::Vector3d(1, 2, 3).normalized();
  r.near = 1.3;
  r.far = 4.1;
  const RaySamples two = sample_ray(r, 2);
  CHECK(two.depths[0] == 1.3);
  CHECK(two.depths[1] == 4.1);

  const RaySamples many = sample_ray(r, 128);
  std::vector<double> gaps;
  for (int k = 1; k < 128; ++k) {
    CHECK(many.depths[k] > many.depths[k - 1]);
    gaps.push_back(depth_to_ndc(many.depths[k], r.near, r.far) - depth_to_ndc(many.depths[k - 1], r.near, r.far));
  }
  const auto [lo, hi] = std::minmax_element(gaps.begin(), gaps.end());
  CHECK(*hi - *lo < 1e-9);
  CHECK((many.points[7] - (r.origin + many.depths[7] * r.direction)).norm() < 1e-12);

  std::mt19937_64 jitter(9);
  bool inside = true, increasing = true;
  for (int draw = 0; draw < 1000; ++draw) {
    const RaySamples s = sample_ray(r, 16, &jitter);
    for (int k = 0; k < 16; ++k) {
      const double t = depth_to_ndc(s.depths[k], r.near, r.far);
      inside &= t >= k / 16.0 - 1e-12 && t <= (k + 1) / 16.0 + 1e-12;
      if (k) increasing &= s.depths[k] > s.depths[k - 1];
    }
  }
  CHECK(inside);
  CHECK(increasing);
  CHECK_THROWS_AS(sample_ray(r, 1), DomainError);
}

TEST_CASE("sweep planes are uniform in inverse depth") {
  const SweepPlaneSet s = SweepPlaneSet::uniform(0, 2.0, 8.0, 9);
  REQUIRE(s.depths.size() == 9);
  CHECK(s.depths.front() == doctest::Approx(2.0));
  CHECK(s.depths.back() == doctest::Approx(8.0));
  for (int i = 1; i < 9; ++i) {
    CHECK(s.depths[i] > s.depths[i - 1]);
    CHECK(1 / s.depths[i - 1] - 1 / s.depths[i] == doctest::Approx((0.5 - 0.125) / 8));
  }
}

}
