#include "svnerf/geometry.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace svnerf {

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return K;
}

Eigen::Matrix3d CameraIntrinsics::inverse() const {
  validate();
  Eigen::Matrix3d Ki;
  Ki << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
  return Ki;
}

CameraIntrinsics CameraIntrinsics::downscaled(int factor) const {
  const double s = 1.0 / factor;
  return {fx * s, fy * s, cx * s, cy * s, width / factor, height / factor};
}

void CameraIntrinsics::validate() const {
  if (!(std::isfinite(fx) && std::isfinite(fy) && fx > 0 && fy > 0))
    throw CameraError(fmt::format("invalid focal length ({}, {})", fx, fy));
  if (width <= 0 || height <= 0) throw CameraError("invalid image size");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw CameraError(fmt::format("principal point ({}, {}) outside {}x{} image", cx, cy, width, height));
}

void CameraPose::validate() const {
  if (!R.allFinite() || !t.allFinite()) throw CameraError("non-finite pose");
  const double ortho = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6) throw CameraError(fmt::format("rotation not orthonormal (error {:.3g})", ortho));
  if (std::abs(R.determinant() - 1.0) > 1e-6) throw CameraError("rotation determinant is not +1");
}

CameraPose CameraPose::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                               const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = (-up).cross(z);
  if (x.norm() < 1e-12) x = Eigen::Vector3d::UnitX().cross(z);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  CameraPose pose;
  pose.R.row(0) = x.transpose();
  pose.R.row(1) = y.transpose();
  pose.R.row(2) = z.transpose();
  pose.t = -pose.R * eye;
  return pose;
}

Eigen::Vector2d Camera::project(const Eigen::Vector3d& x_world) const {
  const Eigen::Vector3d p = pose.to_camera(x_world);
  return {intrinsics.fx * p.x() / p.z() + intrinsics.cx, intrinsics.fy * p.y() / p.z() + intrinsics.cy};
}

Eigen::Vector3d Camera::unproject(const Eigen::Vector2d& pixel, double depth) const {
  const Eigen::Vector3d p((pixel.x() - intrinsics.cx) / intrinsics.fx * depth,
                          (pixel.y() - intrinsics.cy) / intrinsics.fy * depth, depth);
  return pose.to_world(p);
}

void CameraView::validate() const {
  camera.intrinsics.validate();
  camera.pose.validate();
  if (!(near > 0 && near < far)) throw CameraError(fmt::format("invalid near/far ({}, {})", near, far));
  if (image.height != camera.intrinsics.height || image.width != camera.intrinsics.width)
    throw CameraError("image dimensions do not match intrinsics");
}

SweepPlaneSet SweepPlaneSet::uniform(int reference, double near, double far, int count) {
  if (count < 2) throw DomainError("sweep needs at least two planes");
  if (!(near > 0 && near < far)) throw DomainError("sweep needs 0 < near < far");
  SweepPlaneSet set;
  set.reference = reference;
  set.depths.resize(count);
  for (int d = 0; d < count; ++d) set.depths[d] = ndc_to_depth(double(d) / (count - 1), near, far);
  set.depths.front() = near;
  set.depths.back() = far;
  return set;
}

Eigen::Matrix3d homography_matrix(const Camera& src, const Camera& ref, const Eigen::Vector3d& normal,
                                  double z) {
  if (!(z > 0)) throw DomainError(fmt::format("homography depth must be positive, got {}", z));
  src.intrinsics.validate();
  ref.intrinsics.validate();
  const Eigen::Matrix3d rel_R = src.pose.R * ref.pose.R.transpose();
  const Eigen::Vector3d rel_t = src.pose.t - rel_R * ref.pose.t;
  return src.intrinsics.matrix() * (rel_R + rel_t * normal.transpose() / z) * ref.intrinsics.inverse();
}

template <typename T>
void bilinear_lookup(const Grid<T>& map, double u, double v, T* out) {
  const int C = map.channels;
  if (!std::isfinite(u)) u = 0;
  if (!std::isfinite(v)) v = 0;
  u = std::clamp(u, 0.0, double(map.width - 1));
  v = std::clamp(v, 0.0, double(map.height - 1));
  const int x0 = std::min(int(u), map.width - 1), y0 = std::min(int(v), map.height - 1);
  const int x1 = std::min(x0 + 1, map.width - 1), y1 = std::min(y0 + 1, map.height - 1);
  const T ax = T(u - x0), ay = T(v - y0);
  const T* p00 = map.voxel(0, y0, x0);
  const T* p01 = map.voxel(0, y0, x1);
  const T* p10 = map.voxel(0, y1, x0);
  const T* p11 = map.voxel(0, y1, x1);
  const T w00 = (1 - ax) * (1 - ay), w01 = ax * (1 - ay), w10 = (1 - ax) * ay, w11 = ax * ay;
  for (int c = 0; c < C; ++c) out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
}

template <typename T>
Grid<T> warp_feature_map(const Grid<T>& src, const Eigen::Matrix3d& H, int out_height, int out_width) {
  if (src.depth != 1) throw DomainError("warp_feature_map expects a 2D map");
  Grid<T> out = Grid<T>::image(out_height, out_width, src.channels);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Eigen::Vector3d p = H * Eigen::Vector3d(x, y, 1.0);
      double u = 0, v = 0;
      if (std::abs(p.z()) > 1e-12) {
        u = p.x() / p.z();
        v = p.y() / p.z();
      }
      bilinear_lookup(src, u, v, out.voxel(0, y, x));
    }
  }
  return out;
}

double depth_to_ndc(double depth, double near, double far) {
  return (1.0 / depth - 1.0 / near) / (1.0 / far - 1.0 / near);
}

double ndc_to_depth(double ndc, double near, double far) {
  return 1.0 / (1.0 / near + ndc * (1.0 / far - 1.0 / near));
}

Eigen::Vector3d to_ndc(const Eigen::Vector3d& x, const Camera& ref, double near, double far) {
  const Eigen::Vector3d p = ref.pose.to_camera(x);
  if (!(p.z() > 0)) throw BehindCameraError(fmt::format("point depth {} is not in front of camera", p.z()));
  const auto& K = ref.intrinsics;
  const double u = K.fx * p.x() / p.z() + K.cx;
  const double v = K.fy * p.y() / p.z() + K.cy;
  return {u / (K.width - 1), v / (K.height - 1), depth_to_ndc(p.z(), near, far)};
}

Eigen::Vector3d from_ndc(const Eigen::Vector3d& ndc, const Camera& ref, double near, double far) {
  const auto& K = ref.intrinsics;
  const Eigen::Vector2d pixel(ndc.x() * (K.width - 1), ndc.y() * (K.height - 1));
  return ref.unproject(pixel, ndc_to_depth(ndc.z(), near, far));
}

Reprojection reproject_point(const Eigen::Vector3d& x, const Camera& camera) {
  const Eigen::Vector3d p = camera.pose.to_camera(x);
  Reprojection r;
  if (!(p.z() > 0)) return r;
  const auto& K = camera.intrinsics;
  r.pixel = {K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy};
  r.in_bounds = r.pixel.x() >= 0 && r.pixel.x() <= K.width - 1 && r.pixel.y() >= 0 &&
                r.pixel.y() <= K.height - 1;
  return r;
}

std::vector<Ray> generate_rays(const Camera& target, std::span<const Eigen::Vector2d> pixels, double near,
                               double far) {
  const auto& K = target.intrinsics;
  const Eigen::Matrix3d Rt = target.pose.R.transpose();
  const Eigen::Vector3d origin = target.pose.center();
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& px : pixels) {
    const Eigen::Vector3d cam_dir((px.x() - K.cx) / K.fx, (px.y() - K.cy) / K.fy, 1.0);
    rays.push_back({origin, (Rt * cam_dir).normalized(), near, far});
  }
  return rays;
}

RaySamples sample_ray(const Ray& ray, int count, std::mt19937_64* jitter) {
  if (count < 2) throw DomainError(fmt::format("sample_ray needs at least 2 samples, got {}", count));
  RaySamples s;
  s.depths.resize(count);
  s.points.resize(count);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    double t;
    if (jitter) {
      t = (k + unit(*jitter)) / count;
    } else {
      t = double(k) / (count - 1);
    }
    s.depths[k] = ndc_to_depth(t, ray.near, ray.far);
  }
  if (!jitter) {
    s.depths.front() = ray.near;
    s.depths.back() = ray.far;
  }
  for (int k = 0; k < count; ++k) s.points[k] = ray.origin + s.depths[k] * ray.direction;
  return s;
}

template void bilinear_lookup<float>(const Grid<float>&, double, double, float*);
template void bilinear_lookup<double>(const Grid<double>&, double, double, double*);
template Grid<float> warp_feature_map<float>(const Grid<float>&, const Eigen::Matrix3d&, int, int);
template Grid<double> warp_feature_map<double>(const Grid<double>&, const Eigen::Matrix3d&, int, int);

}  // namespace svnerf
