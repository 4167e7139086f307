#pragma once

#include "svnerf/tensor.hpp"

namespace svnerf {

struct CompositeOptions {
  // Treat every sample interval as 1, i.e. alpha_k = 1 - exp(-sigma_k).
  bool unit_intervals = false;
  bool white_background = false;
};

// Sample intervals delta_k = z_{k+1} - z_k; the last interval repeats the previous one.
// z is rays x samples.
template <typename T>
Mat<T> sample_intervals(const Mat<T>& z, bool unit_intervals);

// Per-ray transmittance T_k = exp(-sum_{j<k} sigma_j delta_j) and weights w_k = T_k (1 - exp(-sigma_k delta_k)),
// accumulated in ascending k.
template <typename T>
struct RayWeights {
  Mat<T> transmittance;  // rays x samples
  Mat<T> weights;        // rays x samples
};

template <typename T>
RayWeights<T> transmittance_weights(const Mat<T>& sigma, const Mat<T>& delta);

// dL/dsigma given dL/dweights.
template <typename T>
Mat<T> transmittance_weights_backward(const RayWeights<T>& rw, const Mat<T>& sigma, const Mat<T>& delta,
                                      const Mat<T>& dweights);

// D = sum_k w_k z_k per ray.
template <typename T>
Vec<T> render_depth(const Mat<T>& sigma, const Mat<T>& z, bool unit_intervals = false);

template <typename T>
struct RenderOutput {
  Mat<T> color;          // rays x 3
  Vec<T> depth;          // rays
  Vec<T> opacity;        // rays, sum of weights
  Mat<T> weights;        // rays x samples
  Mat<T> transmittance;  // rays x samples
};

// sigma, z: rays x samples; color: (rays * samples) x 3, ray-major.
template <typename T>
RenderOutput<T> composite(const Mat<T>& sigma, const Mat<T>& color, const Mat<T>& z,
                          const CompositeOptions& options = {});

template <typename T>
struct CompositeGrads {
  Mat<T> dsigma;  // rays x samples
  Mat<T> dcolor;  // (rays * samples) x 3
};

template <typename T>
CompositeGrads<T> composite_backward(const RenderOutput<T>& out, const Mat<T>& sigma, const Mat<T>& color,
                                     const Mat<T>& z, const Mat<T>& dcolor_out, const Vec<T>& ddepth,
                                     const CompositeOptions& options = {});

}  // namespace svnerf
