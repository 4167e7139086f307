#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <random>
#include <span>
#include <vector>

#include "svnerf/tensor.hpp"

namespace svnerf {

// Pinhole intrinsics in pixels. Pixel (u, v) addresses the center of column u, row v.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse() const;
  // Intrinsics of a grid downsampled by `factor` under the (u / factor) pixel convention.
  CameraIntrinsics downscaled(int factor) const;
  // Throws CameraError when the matrix is singular or the principal point is off-image.
  void validate() const;
};

// World-to-camera rigid transform: x_cam = R * x_world + t.
struct CameraPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -R.transpose() * t; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& x) const { return R * x + t; }
  Eigen::Vector3d to_world(const Eigen::Vector3d& p) const { return R.transpose() * (p - t); }
  // Throws CameraError unless R is orthonormal with det +1 (within 1e-6).
  void validate() const;

  // Camera at `eye` looking at `target`; image y axis points along -up.
  static CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                            const Eigen::Vector3d& up = Eigen::Vector3d(0, -1, 0));
};

struct Camera {
  CameraIntrinsics intrinsics;
  CameraPose pose;

  Eigen::Vector2d project(const Eigen::Vector3d& x_world) const;
  // World point at camera-frame depth `depth` behind pixel (u, v).
  Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth) const;
};

struct CameraView {
  Image image;  // height x width x 3, values in [0, 1]
  Camera camera;
  double near = 0.1;
  double far = 10.0;

  void validate() const;
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double near = 0.1;
  double far = 10.0;
};

struct SweepPlaneSet {
  int reference = 0;
  std::vector<double> depths;                          // strictly increasing
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // in the reference camera frame

  // `count` planes placed uniformly in NDC (inverse) depth between near and far.
  static SweepPlaneSet uniform(int reference, double near, double far, int count);
};

struct RaySamples {
  std::vector<double> depths;  // distance along the ray
  std::vector<Eigen::Vector3d> points;
};

struct Reprojection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  bool in_bounds = false;
};

// Maps homogeneous reference pixels to source pixels for points on the plane n^T x_ref = z.
Eigen::Matrix3d homography_matrix(const Camera& src, const Camera& ref, const Eigen::Vector3d& normal,
                                  double z);

// Edge-padded bilinear lookup of a 2D grid at continuous pixel coordinates.
template <typename T>
void bilinear_lookup(const Grid<T>& map, double u, double v, T* out);

// Warps `src` into the frame addressed by H: out(u, v) = Pad(src)(H [u v 1]^T).
template <typename T>
Grid<T> warp_feature_map(const Grid<T>& src, const Eigen::Matrix3d& H, int out_height, int out_width);

template <typename T>
Grid<T> warp_feature_map(const Grid<T>& src, const Eigen::Matrix3d& H) {
  return warp_feature_map(src, H, src.height, src.width);
}

// Inverse-depth-linear mapping between camera depth and [0, 1].
double depth_to_ndc(double depth, double near, double far);
double ndc_to_depth(double ndc, double near, double far);

Eigen::Vector3d to_ndc(const Eigen::Vector3d& x, const Camera& ref, double near, double far);
Eigen::Vector3d from_ndc(const Eigen::Vector3d& ndc, const Camera& ref, double near, double far);

Reprojection reproject_point(const Eigen::Vector3d& x, const Camera& camera);

std::vector<Ray> generate_rays(const Camera& target, std::span<const Eigen::Vector2d> pixels, double near,
                               double far);

// Samples placed uniformly in inverse depth between ray.near and ray.far; with a generator,
// sample k is drawn uniformly from stratum [k/N, (k+1)/N) of that coordinate.
RaySamples sample_ray(const Ray& ray, int count, std::mt19937_64* jitter = nullptr);

}  // namespace svnerf
