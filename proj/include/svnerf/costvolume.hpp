#pragma once

#include <array>
#include <span>
#include <vector>

#include "svnerf/geometry.hpp"
#include "svnerf/nn/conv.hpp"

namespace svnerf {

// Per source view, per sweep depth: the view's features warped onto the reference grid.
// views[i] has shape D x h x w x C.
template <typename T>
struct WarpedFeatureStack {
  int reference = 0;
  std::vector<Grid<T>> views;
};

// Bilinear taps for every (view, depth, reference pixel). Geometry only, so one plan serves the
// forward gather and the backward scatter.
struct SweepPlan {
  struct Tap {
    std::array<int, 4> index{};  // flat pixel index into the source feature map
    std::array<double, 4> weight{};
  };

  int views = 0;
  int reference = 0;
  int depth = 0;
  int height = 0;
  int width = 0;
  std::vector<Tap> taps;  // [view][depth][y][x]; the reference view's entries are unused

  const Tap& tap(int view, int d, int y, int x) const {
    return taps[((std::size_t(view) * depth + d) * height + y) * width + x];
  }
};

// `cameras` are full-resolution; feature maps are `downsample` times smaller.
SweepPlan make_sweep_plan(std::span<const Camera> cameras, int reference, const SweepPlaneSet& planes,
                          int feature_height, int feature_width, int downsample);

template <typename T>
WarpedFeatureStack<T> build_plane_sweep(std::span<const Grid<T>> features, const SweepPlan& plan);

template <typename T>
WarpedFeatureStack<T> build_plane_sweep(std::span<const Grid<T>> features, std::span<const Camera> cameras,
                                        int reference, const SweepPlaneSet& planes, int downsample = 4) {
  if (features.empty()) throw DomainError("plane sweep needs feature maps");
  return build_plane_sweep(features, make_sweep_plan(cameras, reference, planes, features.front().height,
                                                     features.front().width, downsample));
}

// Gradient of the stack w.r.t. each input feature map.
template <typename T>
std::vector<Grid<T>> build_plane_sweep_backward(const SweepPlan& plan, const WarpedFeatureStack<T>& dstack,
                                                int feature_height, int feature_width);

// Population variance across views, per voxel and channel.
template <typename T>
Grid<T> variance_cost(const WarpedFeatureStack<T>& stack);

template <typename T>
WarpedFeatureStack<T> variance_cost_backward(const WarpedFeatureStack<T>& stack, const Grid<T>& dcost);

// Encoded volume V over the reference frustum. Voxel (d, y, x) holds the plane at NDC depth
// d / (D - 1) seen through reference feature pixel (x, y), i.e. image pixel (x, y) * downsample.
template <typename T>
struct GeometryVolume {
  Grid<T> values;
  Camera reference;
  double near = 0.1;
  double far = 10.0;
  int downsample = 4;

  // Continuous voxel coordinates (x, y, d) for an NDC point, clamped to the grid.
  Eigen::Vector3d grid_coords(const Eigen::Vector3d& ndc, std::array<bool, 3>* clamped = nullptr) const;
  // NDC coordinates of a world point, tolerating points at or behind the reference plane.
  Eigen::Vector3d safe_ndc(const Eigen::Vector3d& x) const;
  // d(ndc)/d(x) at a world point.
  Eigen::Matrix3d ndc_jacobian(const Eigen::Vector3d& x) const;
};

template <typename T>
GeometryVolume<T> encode_volume(const Grid<T>& cost, const nn::UNet3d<T>& unet, const nn::ParameterStore<T>& p,
                                const Camera& reference, double near, double far, int downsample,
                                typename nn::UNet3d<T>::Tape* tape = nullptr);

// Eight voxel taps for one trilinear lookup plus the data needed for coordinate gradients.
struct TrilinearTap {
  std::array<std::size_t, 8> voxel{};
  std::array<double, 8> weight{};
  Eigen::Vector3d frac = Eigen::Vector3d::Zero();
  std::array<bool, 3> clamped{};
};

template <typename T>
TrilinearTap trilinear_tap(const GeometryVolume<T>& V, const Eigen::Vector3d& x);

template <typename T>
void trilinear_gather(const GeometryVolume<T>& V, const TrilinearTap& tap, T* out);

template <typename T>
std::vector<T> trilinear_sample(const GeometryVolume<T>& V, const Eigen::Vector3d& x);

// Accumulates dL/dV for one lookup; when `dx` is given, also writes dL/dx.
template <typename T>
void trilinear_sample_backward(const GeometryVolume<T>& V, const Eigen::Vector3d& x, const TrilinearTap& tap,
                               const T* ds, Grid<T>& dV, Eigen::Vector3d* dx = nullptr);

}  // namespace svnerf
