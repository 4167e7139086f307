#include "svnerf/costvolume.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace svnerf {

SweepPlan make_sweep_plan(std::span<const Camera> cameras, int reference, const SweepPlaneSet& planes,
                          int feature_height, int feature_width, int downsample) {
  const int M = int(cameras.size());
  if (M < 2) throw DomainError(fmt::format("plane sweep needs at least 2 views, got {}", M));
  if (reference < 0 || reference >= M) throw DomainError("reference view index out of range");
  SweepPlan plan;
  plan.views = M;
  plan.reference = reference;
  plan.depth = int(planes.depths.size());
  plan.height = feature_height;
  plan.width = feature_width;
  plan.taps.resize(std::size_t(M) * plan.depth * feature_height * feature_width);

  Camera ref = cameras[reference];
  ref.intrinsics = ref.intrinsics.downscaled(downsample);
  for (int i = 0; i < M; ++i) {
    if (i == reference) continue;
    Camera src = cameras[i];
    src.intrinsics = src.intrinsics.downscaled(downsample);
    for (int d = 0; d < plan.depth; ++d) {
      const Eigen::Matrix3d H = homography_matrix(src, ref, planes.normal, planes.depths[d]);
      for (int y = 0; y < feature_height; ++y) {
        for (int x = 0; x < feature_width; ++x) {
          const Eigen::Vector3d p = H * Eigen::Vector3d(x, y, 1.0);
          double u = 0, v = 0;
          if (std::abs(p.z()) > 1e-12) {
            u = p.x() / p.z();
            v = p.y() / p.z();
          }
          if (!std::isfinite(u)) u = 0;
          if (!std::isfinite(v)) v = 0;
          u = std::clamp(u, 0.0, double(feature_width - 1));
          v = std::clamp(v, 0.0, double(feature_height - 1));
          const int x0 = std::min(int(u), feature_width - 1), y0 = std::min(int(v), feature_height - 1);
          const int x1 = std::min(x0 + 1, feature_width - 1), y1 = std::min(y0 + 1, feature_height - 1);
          const double ax = u - x0, ay = v - y0;
          auto& tap = plan.taps[((std::size_t(i) * plan.depth + d) * feature_height + y) * feature_width + x];
          tap.index = {y0 * feature_width + x0, y0 * feature_width + x1, y1 * feature_width + x0,
                       y1 * feature_width + x1};
          tap.weight = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
        }
      }
    }
  }
  return plan;
}

template <typename T>
WarpedFeatureStack<T> build_plane_sweep(std::span<const Grid<T>> features, const SweepPlan& plan) {
  if (int(features.size()) != plan.views) throw DomainError("feature map count does not match the sweep plan");
  const int C = features.front().channels;
  for (const auto& f : features)
    if (f.height != plan.height || f.width != plan.width || f.channels != C || f.depth != 1)
      throw DomainError("feature maps must share shape with the sweep plan");

  WarpedFeatureStack<T> stack;
  stack.reference = plan.reference;
  stack.views.reserve(plan.views);
  const std::size_t plane = std::size_t(plan.height) * plan.width * C;
  for (int i = 0; i < plan.views; ++i) {
    Grid<T> g(plan.depth, plan.height, plan.width, C);
    const T* src = features[i].data.data();
    if (i == plan.reference) {
      for (int d = 0; d < plan.depth; ++d) std::copy(src, src + plane, g.data.begin() + d * plane);
    } else {
      for (int d = 0; d < plan.depth; ++d) {
        for (int y = 0; y < plan.height; ++y) {
          for (int x = 0; x < plan.width; ++x) {
            const auto& tap = plan.tap(i, d, y, x);
            T* out = g.voxel(d, y, x);
            for (int k = 0; k < 4; ++k) {
              const T w = T(tap.weight[k]);
              const T* s = src + std::size_t(tap.index[k]) * C;
              for (int c = 0; c < C; ++c) out[c] += w * s[c];
            }
          }
        }
      }
    }
    stack.views.push_back(std::move(g));
  }
  return stack;
}

template <typename T>
std::vector<Grid<T>> build_plane_sweep_backward(const SweepPlan& plan, const WarpedFeatureStack<T>& dstack,
                                                int feature_height, int feature_width) {
  const int C = dstack.views.front().channels;
  std::vector<Grid<T>> grads;
  for (int i = 0; i < plan.views; ++i) {
    Grid<T> g = Grid<T>::image(feature_height, feature_width, C);
    const Grid<T>& dv = dstack.views[i];
    if (i == plan.reference) {
      const std::size_t plane = std::size_t(feature_height) * feature_width * C;
      for (int d = 0; d < plan.depth; ++d)
        for (std::size_t k = 0; k < plane; ++k) g.data[k] += dv.data[d * plane + k];
    } else {
      for (int d = 0; d < plan.depth; ++d) {
        for (int y = 0; y < plan.height; ++y) {
          for (int x = 0; x < plan.width; ++x) {
            const auto& tap = plan.tap(i, d, y, x);
            const T* in = dv.voxel(d, y, x);
            for (int k = 0; k < 4; ++k) {
              const T w = T(tap.weight[k]);
              T* dst = g.data.data() + std::size_t(tap.index[k]) * C;
              for (int c = 0; c < C; ++c) dst[c] += w * in[c];
            }
          }
        }
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

template <typename T>
Grid<T> variance_cost(const WarpedFeatureStack<T>& stack) {
  const int M = int(stack.views.size());
  if (M < 2) throw DomainError(fmt::format("variance cost needs at least 2 views, got {}", M));
  const Grid<T>& first = stack.views.front();
  for (const auto& v : stack.views)
    if (!v.same_shape(first)) throw DomainError("warped feature stack has inconsistent shapes");
  Grid<T> cost(first.depth, first.height, first.width, first.channels);
  const T inv = T(1) / T(M);
  for (std::size_t k = 0; k < cost.data.size(); ++k) {
    T sum = 0;
    for (int i = 0; i < M; ++i) sum += stack.views[i].data[k];
    const T mean = sum * inv;
    T sq = 0;
    for (int i = 0; i < M; ++i) {
      const T dev = stack.views[i].data[k] - mean;
      sq += dev * dev;
    }
    cost.data[k] = sq * inv;
  }
  return cost;
}

template <typename T>
WarpedFeatureStack<T> variance_cost_backward(const WarpedFeatureStack<T>& stack, const Grid<T>& dcost) {
  const int M = int(stack.views.size());
  WarpedFeatureStack<T> d;
  d.reference = stack.reference;
  for (const auto& v : stack.views) d.views.emplace_back(v.depth, v.height, v.width, v.channels);
  const T inv = T(1) / T(M);
  for (std::size_t k = 0; k < dcost.data.size(); ++k) {
    T sum = 0;
    for (int i = 0; i < M; ++i) sum += stack.views[i].data[k];
    const T mean = sum * inv;
    const T g = dcost.data[k] * T(2) * inv;
    for (int i = 0; i < M; ++i) d.views[i].data[k] = g * (stack.views[i].data[k] - mean);
  }
  return d;
}

template <typename T>
Eigen::Vector3d GeometryVolume<T>::grid_coords(const Eigen::Vector3d& ndc, std::array<bool, 3>* clamped) const {
  const auto& K = reference.intrinsics;
  const double gx = ndc.x() * (K.width - 1) / downsample;
  const double gy = ndc.y() * (K.height - 1) / downsample;
  const double gd = ndc.z() * (values.depth - 1);
  const Eigen::Vector3d raw(gx, gy, gd);
  const Eigen::Vector3d hi(values.width - 1, values.height - 1, values.depth - 1);
  Eigen::Vector3d g;
  for (int a = 0; a < 3; ++a) {
    const double v = std::isfinite(raw[a]) ? raw[a] : 0.0;
    g[a] = std::clamp(v, 0.0, hi[a]);
    if (clamped) (*clamped)[a] = !(v > 0.0 && v < hi[a]);
  }
  return g;
}

template <typename T>
Eigen::Vector3d GeometryVolume<T>::safe_ndc(const Eigen::Vector3d& x) const {
  Eigen::Vector3d p = reference.pose.to_camera(x);
  const double min_depth = 1e-3 * near;
  if (p.z() < min_depth) p.z() = min_depth;
  const auto& K = reference.intrinsics;
  return {(K.fx * p.x() / p.z() + K.cx) / (K.width - 1), (K.fy * p.y() / p.z() + K.cy) / (K.height - 1),
          depth_to_ndc(p.z(), near, far)};
}

template <typename T>
Eigen::Matrix3d GeometryVolume<T>::ndc_jacobian(const Eigen::Vector3d& x) const {
  const Eigen::Vector3d p = reference.pose.to_camera(x);
  const auto& K = reference.intrinsics;
  const double iz = 1.0 / p.z();
  Eigen::Matrix3d J;
  J << K.fx * iz / (K.width - 1), 0, -K.fx * p.x() * iz * iz / (K.width - 1),  //
      0, K.fy * iz / (K.height - 1), -K.fy * p.y() * iz * iz / (K.height - 1),   //
      0, 0, -iz * iz / (1.0 / far - 1.0 / near);
  return J * reference.pose.R;
}

template <typename T>
GeometryVolume<T> encode_volume(const Grid<T>& cost, const nn::UNet3d<T>& unet, const nn::ParameterStore<T>& p,
                                const Camera& reference, double near, double far, int downsample,
                                typename nn::UNet3d<T>::Tape* tape) {
  GeometryVolume<T> V;
  V.values = unet.forward(p, cost, tape);
  V.reference = reference;
  V.near = near;
  V.far = far;
  V.downsample = downsample;
  return V;
}

template <typename T>
TrilinearTap trilinear_tap(const GeometryVolume<T>& V, const Eigen::Vector3d& x) {
  TrilinearTap tap;
  const Eigen::Vector3d g = V.grid_coords(V.safe_ndc(x), &tap.clamped);
  const int W = V.values.width, H = V.values.height, D = V.values.depth;
  const int x0 = std::min(int(g.x()), W - 1), y0 = std::min(int(g.y()), H - 1), d0 = std::min(int(g.z()), D - 1);
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1), d1 = std::min(d0 + 1, D - 1);
  tap.frac = {g.x() - x0, g.y() - y0, g.z() - d0};
  const int xs[2] = {x0, x1}, ys[2] = {y0, y1}, ds[2] = {d0, d1};
  int k = 0;
  for (int a = 0; a < 2; ++a) {
    const double wd = a ? tap.frac.z() : 1 - tap.frac.z();
    for (int b = 0; b < 2; ++b) {
      const double wy = b ? tap.frac.y() : 1 - tap.frac.y();
      for (int c = 0; c < 2; ++c, ++k) {
        const double wx = c ? tap.frac.x() : 1 - tap.frac.x();
        tap.voxel[k] = V.values.index(ds[a], ys[b], xs[c], 0);
        tap.weight[k] = wd * wy * wx;
      }
    }
  }
  return tap;
}

template <typename T>
void trilinear_gather(const GeometryVolume<T>& V, const TrilinearTap& tap, T* out) {
  const int C = V.values.channels;
  for (int c = 0; c < C; ++c) out[c] = 0;
  for (int k = 0; k < 8; ++k) {
    const T w = T(tap.weight[k]);
    const T* v = V.values.data.data() + tap.voxel[k];
    for (int c = 0; c < C; ++c) out[c] += w * v[c];
  }
}

template <typename T>
std::vector<T> trilinear_sample(const GeometryVolume<T>& V, const Eigen::Vector3d& x) {
  std::vector<T> out(V.values.channels);
  trilinear_gather(V, trilinear_tap(V, x), out.data());
  return out;
}

template <typename T>
void trilinear_sample_backward(const GeometryVolume<T>& V, const Eigen::Vector3d& x, const TrilinearTap& tap,
                               const T* ds, Grid<T>& dV, Eigen::Vector3d* dx) {
  const int C = V.values.channels;
  for (int k = 0; k < 8; ++k) {
    const T w = T(tap.weight[k]);
    T* dst = dV.data.data() + tap.voxel[k];
    for (int c = 0; c < C; ++c) dst[c] += w * ds[c];
  }
  if (!dx) return;
  // d(value)/d(grid coordinate) along each axis.
  Eigen::Vector3d dg = Eigen::Vector3d::Zero();
  const Eigen::Vector3d& f = tap.frac;
  int k = 0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 2; ++c, ++k) {
        const double wx = c ? f.x() : 1 - f.x(), sx = c ? 1 : -1;
        const double wy = b ? f.y() : 1 - f.y(), sy = b ? 1 : -1;
        const double wd = a ? f.z() : 1 - f.z(), sd = a ? 1 : -1;
        const T* v = V.values.data.data() + tap.voxel[k];
        double dot = 0;
        for (int ch = 0; ch < C; ++ch) dot += double(ds[ch]) * double(v[ch]);
        dg.x() += sx * wy * wd * dot;
        dg.y() += wx * sy * wd * dot;
        dg.z() += wx * wy * sd * dot;
      }
    }
  }
  const auto& K = V.reference.intrinsics;
  const Eigen::Vector3d scale((K.width - 1.0) / V.downsample, (K.height - 1.0) / V.downsample,
                              double(V.values.depth - 1));
  Eigen::Vector3d dndc;
  for (int a = 0; a < 3; ++a) dndc[a] = tap.clamped[a] ? 0.0 : dg[a] * scale[a];
  *dx = V.ndc_jacobian(x).transpose() * dndc;
}

#define SVNERF_INSTANTIATE(T)                                                                                  \
  template WarpedFeatureStack<T> build_plane_sweep<T>(std::span<const Grid<T>>, const SweepPlan&);            \
  template std::vector<Grid<T>> build_plane_sweep_backward<T>(const SweepPlan&, const WarpedFeatureStack<T>&, \
                                                              int, int);                                      \
  template Grid<T> variance_cost<T>(const WarpedFeatureStack<T>&);                                            \
  template WarpedFeatureStack<T> variance_cost_backward<T>(const WarpedFeatureStack<T>&, const Grid<T>&);     \
  template struct GeometryVolume<T>;                                                                          \
  template GeometryVolume<T> encode_volume<T>(const Grid<T>&, const nn::UNet3d<T>&,                           \
                                              const nn::ParameterStore<T>&, const Camera&, double, double,    \
                                              int, typename nn::UNet3d<T>::Tape*);                            \
  template TrilinearTap trilinear_tap<T>(const GeometryVolume<T>&, const Eigen::Vector3d&);                   \
  template void trilinear_gather<T>(const GeometryVolume<T>&, const TrilinearTap&, T*);                       \
  template std::vector<T> trilinear_sample<T>(const GeometryVolume<T>&, const Eigen::Vector3d&);              \
  template void trilinear_sample_backward<T>(const GeometryVolume<T>&, const Eigen::Vector3d&,                \
                                             const TrilinearTap&, const T*, Grid<T>&, Eigen::Vector3d*);

SVNERF_INSTANTIATE(float)
SVNERF_INSTANTIATE(double)
#undef SVNERF_INSTANTIATE

}  // namespace svnerf
