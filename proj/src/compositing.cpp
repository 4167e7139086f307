#include "svnerf/compositing.hpp"

#include <cmath>

#include <fmt/format.h>

namespace svnerf {

template <typename T>
Mat<T> sample_intervals(const Mat<T>& z, bool unit_intervals) {
  const Eigen::Index N = z.cols();
  if (unit_intervals || N < 2) return Mat<T>::Ones(z.rows(), N);
  Mat<T> delta(z.rows(), N);
  delta.leftCols(N - 1) = z.rightCols(N - 1) - z.leftCols(N - 1);
  delta.col(N - 1) = delta.col(N - 2);
  return delta;
}

template <typename T>
RayWeights<T> transmittance_weights(const Mat<T>& sigma, const Mat<T>& delta) {
  if (sigma.rows() != delta.rows() || sigma.cols() != delta.cols())
    throw DomainError("sigma and delta shapes differ");
  RayWeights<T> rw;
  rw.transmittance.resize(sigma.rows(), sigma.cols());
  rw.weights.resize(sigma.rows(), sigma.cols());
  for (Eigen::Index r = 0; r < sigma.rows(); ++r) {
    T optical = 0;
    for (Eigen::Index k = 0; k < sigma.cols(); ++k) {
      const T Tk = std::exp(-optical);
      const T tau = sigma(r, k) * delta(r, k);
      rw.transmittance(r, k) = Tk;
      rw.weights(r, k) = Tk * -std::expm1(-tau);
      optical += tau;
    }
  }
  return rw;
}

template <typename T>
Mat<T> transmittance_weights_backward(const RayWeights<T>& rw, const Mat<T>& sigma, const Mat<T>& delta,
                                      const Mat<T>& dweights) {
  // dw_k/dsigma_m = delta_m T_{m+1} for k == m, -delta_m w_k for k > m.
  Mat<T> dsigma(sigma.rows(), sigma.cols());
  for (Eigen::Index r = 0; r < sigma.rows(); ++r) {
    T suffix = 0;  // sum_{k > m} w_k g_k
    for (Eigen::Index m = sigma.cols() - 1; m >= 0; --m) {
      const T next_T = rw.transmittance(r, m) * std::exp(-sigma(r, m) * delta(r, m));
      dsigma(r, m) = delta(r, m) * (next_T * dweights(r, m) - suffix);
      suffix += rw.weights(r, m) * dweights(r, m);
    }
  }
  return dsigma;
}

template <typename T>
Vec<T> render_depth(const Mat<T>& sigma, const Mat<T>& z, bool unit_intervals) {
  const RayWeights<T> rw = transmittance_weights(sigma, sample_intervals(z, unit_intervals));
  Vec<T> depth(sigma.rows());
  for (Eigen::Index r = 0; r < sigma.rows(); ++r) {
    T acc = 0;
    for (Eigen::Index k = 0; k < sigma.cols(); ++k) acc += rw.weights(r, k) * z(r, k);
    depth[r] = acc;
  }
  return depth;
}

template <typename T>
RenderOutput<T> composite(const Mat<T>& sigma, const Mat<T>& color, const Mat<T>& z,
                          const CompositeOptions& options) {
  const Eigen::Index R = sigma.rows(), N = sigma.cols();
  if (color.rows() != R * N || color.cols() != 3)
    throw DomainError(fmt::format("composite expects {} x 3 colors, got {} x {}", R * N, color.rows(), color.cols()));
  RayWeights<T> rw = transmittance_weights(sigma, sample_intervals(z, options.unit_intervals));
  RenderOutput<T> out;
  out.color = Mat<T>::Zero(R, 3);
  out.depth = Vec<T>::Zero(R);
  out.opacity = Vec<T>::Zero(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    for (Eigen::Index k = 0; k < N; ++k) {
      const T w = rw.weights(r, k);
      out.color.row(r) += w * color.row(r * N + k);
      out.depth[r] += w * z(r, k);
      out.opacity[r] += w;
    }
    if (options.white_background) out.color.row(r).array() += T(1) - out.opacity[r];
  }
  out.weights = std::move(rw.weights);
  out.transmittance = std::move(rw.transmittance);
  return out;
}

template <typename T>
CompositeGrads<T> composite_backward(const RenderOutput<T>& out, const Mat<T>& sigma, const Mat<T>& color,
                                     const Mat<T>& z, const Mat<T>& dcolor_out, const Vec<T>& ddepth,
                                     const CompositeOptions& options) {
  const Eigen::Index R = sigma.rows(), N = sigma.cols();
  CompositeGrads<T> g;
  g.dcolor.resize(R * N, 3);
  Mat<T> dweights(R, N);
  for (Eigen::Index r = 0; r < R; ++r) {
    const T bg = options.white_background ? dcolor_out.row(r).sum() : T(0);
    for (Eigen::Index k = 0; k < N; ++k) {
      g.dcolor.row(r * N + k) = out.weights(r, k) * dcolor_out.row(r);
      T dw = color.row(r * N + k).dot(dcolor_out.row(r)) - bg;
      if (ddepth.size()) dw += ddepth[r] * z(r, k);
      dweights(r, k) = dw;
    }
  }
  RayWeights<T> rw{out.transmittance, out.weights};
  g.dsigma = transmittance_weights_backward(rw, sigma, sample_intervals(z, options.unit_intervals), dweights);
  return g;
}

#define SVNERF_INSTANTIATE(T)                                                                               \
  template Mat<T> sample_intervals<T>(const Mat<T>&, bool);                                                \
  template RayWeights<T> transmittance_weights<T>(const Mat<T>&, const Mat<T>&);                           \
  template Mat<T> transmittance_weights_backward<T>(const RayWeights<T>&, const Mat<T>&, const Mat<T>&,    \
                                                    const Mat<T>&);                                        \
  template Vec<T> render_depth<T>(const Mat<T>&, const Mat<T>&, bool);                                     \
  template RenderOutput<T> composite<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&,                       \
                                        const CompositeOptions&);                                          \
  template CompositeGrads<T> composite_backward<T>(const RenderOutput<T>&, const Mat<T>&, const Mat<T>&,   \
                                                   const Mat<T>&, const Mat<T>&, const Vec<T>&,            \
                                                   const CompositeOptions&);

SVNERF_INSTANTIATE(float)
SVNERF_INSTANTIATE(double)
#undef SVNERF_INSTANTIATE

}  // namespace svnerf
