#pragma once

// Shared helpers for the unit tests and the acceptance binary: random fixtures, explicit-loop reference
// implementations and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <unistd.h>

#include "svnerf/compositing.hpp"
#include "svnerf/costvolume.hpp"
#include "svnerf/geometry.hpp"
#include "svnerf/nn/attention.hpp"
#include "svnerf/nn/params.hpp"

namespace svtest {

using namespace svnerf;

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("svnerf_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <typename T>
Mat<T> random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1, double hi = 1) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(uniform(rng, lo, hi));
  return m;
}

template <typename T>
Grid<T> random_grid(std::mt19937_64& rng, int d, int h, int w, int c, double lo = -1, double hi = 1) {
  Grid<T> g(d, h, w, c);
  for (auto& v : g.data) v = T(uniform(rng, lo, hi));
  return g;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_angle) {
  Eigen::Vector3d axis(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  if (axis.norm() < 1e-6) axis = Eigen::Vector3d::UnitY();
  return Eigen::AngleAxisd(uniform(rng, -max_angle, max_angle), axis.normalized()).toRotationMatrix();
}

// A camera roughly looking down +z from near the origin.
inline Camera random_camera(std::mt19937_64& rng, int width = 64, int height = 48) {
  Camera c;
  c.intrinsics.width = width;
  c.intrinsics.height = height;
  c.intrinsics.fx = uniform(rng, 40, 90);
  c.intrinsics.fy = c.intrinsics.fx * uniform(rng, 0.95, 1.05);
  c.intrinsics.cx = (width - 1) / 2.0 + uniform(rng, -4, 4);
  c.intrinsics.cy = (height - 1) / 2.0 + uniform(rng, -4, 4);
  const Eigen::Matrix3d R = random_rotation(rng, 0.15);
  const Eigen::Vector3d center(uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4), uniform(rng, -0.2, 0.2));
  c.pose.R = R;
  c.pose.t = -R * center;
  return c;
}

inline Eigen::Matrix3d intrinsic_matrix(const Camera& c) {
  Eigen::Matrix3d K;
  K << c.intrinsics.fx, 0, c.intrinsics.cx, 0, c.intrinsics.fy, c.intrinsics.cy, 0, 0, 1;
  return K;
}

// Reference pixel -> point on the plane n^T x_ref = z -> source frame -> source pixel, written out directly.
inline Eigen::Vector2d plane_transfer_oracle(const Camera& src, const Camera& ref, const Eigen::Vector3d& n, double z,
                                             const Eigen::Vector2d& pixel) {
  const Eigen::Vector3d ray = intrinsic_matrix(ref).inverse() * Eigen::Vector3d(pixel.x(), pixel.y(), 1.0);
  const Eigen::Vector3d x_ref = ray * (z / n.dot(ray));
  const Eigen::Vector3d x_world = ref.pose.R.transpose() * (x_ref - ref.pose.t);
  const Eigen::Vector3d x_src = src.pose.R * x_world + src.pose.t;
  const Eigen::Vector3d h = intrinsic_matrix(src) * x_src;
  return {h.x() / h.z(), h.y() / h.z()};
}

// Two-pass population variance across views.
template <typename T>
Grid<T> loop_variance(const WarpedFeatureStack<T>& s) {
  const Grid<T>& f = s.views.front();
  Grid<T> out(f.depth, f.height, f.width, f.channels);
  const int M = int(s.views.size());
  for (int d = 0; d < f.depth; ++d)
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x)
        for (int c = 0; c < f.channels; ++c) {
          double mean = 0;
          for (int i = 0; i < M; ++i) mean += double(s.views[i].at(d, y, x, c));
          mean /= M;
          double var = 0;
          for (int i = 0; i < M; ++i) {
            const double e = double(s.views[i].at(d, y, x, c)) - mean;
            var += e * e;
          }
          out.at(d, y, x, c) = T(var / M);
        }
  return out;
}

// Scaled dot-product attention with explicit loops over groups, heads, queries, keys and channels.
template <typename T>
Mat<T> loop_attention(const nn::ParameterStore<T>& p, const nn::MultiHeadAttention<T>& a, const Mat<T>& q,
                      const Mat<T>& k, const Mat<T>& v, int groups) {
  const auto& cfg = a.config();
  const auto Wq = p.matrix(a.wq()), Wk = p.matrix(a.wk()), Wv = p.matrix(a.wv()), Wo = p.matrix(a.wo());
  const int nq = int(q.rows() / groups), nkv = int(k.rows() / groups);
  const int dk = cfg.head_dim();
  auto project = [](const Mat<T>& x, Eigen::Map<const Mat<T>> W, int row, int col) {
    double acc = 0;
    for (int i = 0; i < x.cols(); ++i) acc += double(x(row, i)) * double(W(i, col));
    return acc;
  };
  Mat<T> out = Mat<T>::Zero(q.rows(), cfg.output_dim);
  for (int g = 0; g < groups; ++g)
    for (int i = 0; i < nq; ++i) {
      const int qi = g * nq + i;
      std::vector<double> concat(cfg.model_dim, 0.0);
      for (int h = 0; h < cfg.heads; ++h) {
        std::vector<double> logits(nkv);
        double mx = -1e300;
        for (int j = 0; j < nkv; ++j) {
          double dot = 0;
          for (int c = 0; c < dk; ++c)
            dot += project(q, Wq, qi, h * dk + c) * project(k, Wk, g * nkv + j, h * dk + c);
          logits[j] = dot / std::sqrt(double(dk));
          mx = std::max(mx, logits[j]);
        }
        double sum = 0;
        for (auto& l : logits) sum += (l = std::exp(l - mx));
        for (int j = 0; j < nkv; ++j)
          for (int c = 0; c < dk; ++c) concat[h * dk + c] += logits[j] / sum * project(v, Wv, g * nkv + j, h * dk + c);
      }
      for (int o = 0; o < cfg.output_dim; ++o) {
        double acc = 0;
        for (int m = 0; m < cfg.model_dim; ++m) acc += concat[m] * double(Wo(m, o));
        out(qi, o) = T(acc);
      }
    }
  return out;
}

template <typename T>
struct LoopRender {
  Mat<T> color;
  std::vector<double> depth, opacity;
  Mat<T> transmittance, weights;
};

// Front-to-back accumulation, one sample at a time.
template <typename T>
LoopRender<T> loop_composite(const Mat<T>& sigma, const Mat<T>& color, const Mat<T>& z, const CompositeOptions& o) {
  const Eigen::Index R = sigma.rows(), N = sigma.cols();
  LoopRender<T> r;
  r.color = Mat<T>::Zero(R, 3);
  r.depth.assign(R, 0.0);
  r.opacity.assign(R, 0.0);
  r.transmittance = Mat<T>::Zero(R, N);
  r.weights = Mat<T>::Zero(R, N);
  for (Eigen::Index i = 0; i < R; ++i) {
    double trans = 1, optical = 0;
    double rgb[3] = {0, 0, 0};
    for (Eigen::Index k = 0; k < N; ++k) {
      double delta = 1;
      if (!o.unit_intervals) {
        if (N == 1) delta = 1;
        else if (k + 1 < N) delta = double(z(i, k + 1)) - double(z(i, k));
        else delta = double(z(i, k)) - double(z(i, k - 1));
      }
      trans = std::exp(-optical);
      const double w = trans * (1 - std::exp(-double(sigma(i, k)) * delta));
      optical += double(sigma(i, k)) * delta;
      r.transmittance(i, k) = T(trans);
      r.weights(i, k) = T(w);
      for (int c = 0; c < 3; ++c) rgb[c] += w * double(color(i * N + k, c));
      r.depth[i] += w * double(z(i, k));
      r.opacity[i] += w;
    }
    for (int c = 0; c < 3; ++c) r.color(i, c) = T(rgb[c] + (o.white_background ? 1 - r.opacity[i] : 0.0));
  }
  return r;
}

template <typename T>
double loop_loss(const Mat<T>& pred, const Mat<T>& gt) {
  double sum = 0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const double e = double(pred(r, c)) - double(gt(r, c));
      sum += e * e;
    }
  return sum / double(pred.rows());
}

// Sliding 11x11 window SSIM with the Gaussian weights evaluated in place.
inline double loop_ssim(const Mat<double>& a, const Mat<double>& b) {
  const int r = 5;
  double g[11], gs = 0;
  for (int i = -r; i <= r; ++i) gs += g[i + r] = std::exp(-(i * i) / (2 * 1.5 * 1.5));
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0;
  int count = 0;
  for (Eigen::Index y = r; y + r < a.rows(); ++y)
    for (Eigen::Index x = r; x + r < a.cols(); ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double w = g[dy + r] * g[dx + r] / (gs * gs);
          const double va = a(y + dy, x + dx), vb = b(y + dy, x + dx);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
      ++count;
    }
  return total / count;
}

struct GradCheckResult {
  double worst_relative = 0;
  std::string worst_name;
  int checked = 0;
  int failures = 0;
};

// Compares analytic gradients against central differences for up to `per_entry` random scalars of every
// parameter entry. A scalar passes when |a - n| <= tol * max(|a|, |n|) or |a - n| <= abs_floor.
inline GradCheckResult check_parameter_gradients(nn::ParameterStore<double>& p, const nn::ParameterStore<double>& grads,
                                                 const std::function<double()>& loss, std::mt19937_64& rng,
                                                 int per_entry = 4, double step = 1e-4, double tol = 1e-3,
                                                 double abs_floor = 1e-8) {
  GradCheckResult r;
  for (int e = 0; e < p.size(); ++e) {
    auto& values = p.values(e);
    const int n = int(values.size());
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int s = 0; s < std::min(n, per_entry); ++s) {
      const int i = idx[s];
      const double keep = values[i];
      values[i] = keep + step;
      const double up = loss();
      values[i] = keep - step;
      const double down = loss();
      values[i] = keep;
      const double numeric = (up - down) / (2 * step);
      const double analytic = grads.values(e)[i];
      const double diff = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = scale > 0 ? diff / scale : 0.0;
      ++r.checked;
      if (diff > abs_floor && diff > tol * scale) {
        ++r.failures;
        if (rel > r.worst_relative || r.worst_name.empty()) {
          r.worst_relative = rel;
          r.worst_name = p.name(e) + "[" + std::to_string(i) + "]";
        }
      } else if (diff > abs_floor && rel > r.worst_relative && r.failures == 0) {
        r.worst_relative = rel;
        r.worst_name = p.name(e) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

// Same comparison for an input array.
inline GradCheckResult check_input_gradients(std::vector<double*> inputs, const std::vector<double>& analytic,
                                             const std::function<double()>& loss, double step = 1e-4,
                                             double tol = 1e-3, double abs_floor = 1e-8) {
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    double& v = *inputs[i];
    const double keep = v;
    v = keep + step;
    const double up = loss();
    v = keep - step;
    const double down = loss();
    v = keep;
    const double numeric = (up - down) / (2 * step);
    const double diff = std::abs(analytic[i] - numeric);
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
    ++r.checked;
    if (diff > abs_floor && diff > tol * scale) {
      ++r.failures;
      if (scale > 0 && diff / scale > r.worst_relative) {
        r.worst_relative = diff / scale;
        r.worst_name = "input[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace svtest
