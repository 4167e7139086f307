#include <doctest.h>

#include "support.hpp"
#include "svnerf/metrics.hpp"

using namespace svnerf;

TEST_SUITE("metrics") {

TEST_CASE("PSNR closed forms") {
  std::mt19937_64 rng(1);
  const Image a = svtest::random_grid<float>(rng, 1, 16, 16, 3, 0.2, 0.8);
  CHECK(psnr(a, a) == 99.0);
  Image b = a;
  for (float& v : b.data) v += 0.1f;
  CHECK(psnr(b, a) == doctest::Approx(20.0).epsilon(1e-5));
  for (float& v : b.data) v -= 0.09f;
  CHECK(psnr(b, a) == doctest::Approx(40.0).epsilon(1e-3));
  CHECK(psnr_from_mse(0.0001) == doctest::Approx(40.0));
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0));

  const Image c = svtest::random_grid<float>(rng, 1, 16, 16, 3, 0, 1);
  CHECK(psnr(a, c) == psnr(c, a));
  double prev = 1e9;
  for (double m = 1e-9; m < 1; m *= 3) {
    const double p = psnr_from_mse(m);
    CHECK(p < prev);
    prev = p;
  }
  CHECK_THROWS_AS(psnr(a, Image::image(8, 8, 3)), DomainError);
}

TEST_CASE("evaluation window ignores padding") {
  std::mt19937_64 rng(2);
  const Image a = svtest::random_grid<float>(rng, 1, 32, 32, 3, 0, 1);
  Image b = a;
  for (int y = 0; y < 32; ++y)
    for (int x = 20; x < 32; ++x)
      for (int c = 0; c < 3; ++c) b(y, x, c) = 1 - a(y, x, c);
  CHECK(psnr(b, a, {20, 32}) == 99.0);
  CHECK(ssim(b, a, {20, 32}) == 1.0);
  CHECK(psnr(b, a) < 30);
}

TEST_CASE("SSIM") {
  std::mt19937_64 rng(3);
  const Image a = svtest::random_grid<float>(rng, 1, 24, 30, 3, 0, 1);
  CHECK(ssim(a, a) == 1.0);
  Image bin = Image::image(24, 24, 1);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) bin(y, x, 0) = float((x / 3 + y / 3) % 2);
  Image inv = bin;
  for (float& v : inv.data) v = 1 - v;
  CHECK(ssim(inv, bin) < 0);
  for (int t = 0; t < 5; ++t) {
    const Image p = svtest::random_grid<float>(rng, 1, 20, 26, 3, 0, 1), q = svtest::random_grid<float>(rng, 1, 20, 26, 3, 0, 1);
    CHECK(std::abs(ssim(p, q) - svtest::loop_ssim(luma(p), luma(q))) < 1e-6);
    const double s = ssim(p, q);
    CHECK(s >= -1);
    CHECK(s <= 1);
  }
  CHECK_THROWS_AS(ssim(Image::image(8, 8, 3), Image::image(8, 8, 3)), DomainError);
}

TEST_CASE("depth metrics") {
  std::mt19937_64 rng(4);
  const Image gt = svtest::random_grid<float>(rng, 1, 10, 12, 1, 1, 3);
  const std::vector<unsigned char> all(120, 1);
  const DepthMetrics same = depth_metrics(gt, gt, all);
  CHECK(same.abs_err == 0);
  CHECK(same.accuracy == std::vector<double>{1, 1});
  Image shifted = gt;
  // Keep the offset exactly representable relative to each value.
  Image base = Image::image(10, 12, 1, 2.0f);
  shifted = base;
  for (float& v : shifted.data) v += 0.03f;
  const DepthMetrics off = depth_metrics(shifted, base, all);
  CHECK(off.abs_err == doctest::Approx(0.03).epsilon(1e-4));
  CHECK(off.accuracy[0] == 0);
  CHECK(off.accuracy[1] == 1);

  for (int t = 0; t < 10; ++t) {
    const Image p = svtest::random_grid<float>(rng, 1, 10, 12, 1, 1, 3);
    std::vector<unsigned char> mask(120);
    for (auto& m : mask) m = rng() % 3 != 0;
    const std::vector<double> taus = {0.01, 0.05, 0.2, 0.5, 1.0};
    const double scale = t % 2 ? 1.0 : 2.5;
    const DepthMetrics d = depth_metrics(p, gt, mask, taus, scale);
    double sum = 0;
    std::vector<double> acc(taus.size(), 0);
    int n = 0;
    for (int i = 0; i < 120; ++i) {
      if (!mask[i]) continue;
      const double e = std::abs(double(p.data[i]) - double(gt.data[i])) / scale;
      sum += e;
      for (std::size_t k = 0; k < taus.size(); ++k) acc[k] += e < taus[k];
      ++n;
    }
    CHECK(std::abs(d.abs_err - sum / n) < 1e-9);
    for (std::size_t k = 0; k < taus.size(); ++k) {
      CHECK(std::abs(d.accuracy[k] - acc[k] / n) < 1e-9);
      if (k) CHECK(d.accuracy[k] >= d.accuracy[k - 1]);
    }
  }
  CHECK_THROWS_AS(depth_metrics(gt, gt, std::vector<unsigned char>(120, 0)), DomainError);
}

TEST_CASE("report formats") {
  Report r;
  r.split = "small";
  r.depth_normalization = "absolute error divided by (far - near) of the target view";
  r.rows.push_back({"scene_a", 5, 30.5, 0.95, 0.012, 0.5, 0.9, true});
  r.rows.push_back({"scene_a", 10, 28.5, 0.93, 0.014, 0.4, 0.8, true});
  r.rows.push_back({"scene_b", 5, 25.0, 0.90, 0, 0, 0, false});
  const std::string table = format_report_table(r);
  CHECK(table ==
        "# split: small\n"
        "# depth normalization: absolute error divided by (far - near) of the target view\n"
        "scene\ttarget\tpsnr\tssim\tlpips\tabs_err\tacc_0.01\tacc_0.05\n"
        "scene_a\t5\t30.5000\t0.9500\tn/a\t0.01200\t0.5000\t0.9000\n"
        "scene_a\t10\t28.5000\t0.9300\tn/a\t0.01400\t0.4000\t0.8000\n"
        "scene_b\t5\t25.0000\t0.9000\tn/a\tn/a\tn/a\tn/a\n");
  const std::string summary = format_report_summary(r);
  CHECK(summary.find("scene_a") != std::string::npos);
  CHECK(summary.find("29.500") != std::string::npos);
  CHECK(summary.find("mean") != std::string::npos);
  CHECK(summary.find("28.000") != std::string::npos);
}

}
