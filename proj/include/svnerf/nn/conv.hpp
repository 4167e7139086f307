#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "svnerf/nn/params.hpp"

namespace svnerf::nn {

// Zero-padded convolution over a channels-last Grid. A 2D convolution is the depth-1 case
// (kernel depth 1, stride 1, padding 0 along depth).
template <typename T>
class Conv {
 public:
  struct Shape {
    std::array<int, 3> kernel{1, 3, 3};
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 1, 1};
  };

  static Shape conv2d(int stride) { return {{1, 3, 3}, {1, stride, stride}, {0, 1, 1}}; }
  static Shape conv3d(int stride) { return {{3, 3, 3}, {stride, stride, stride}, {1, 1, 1}}; }

  Conv() = default;
  Conv(ParameterStore<T>& store, const std::string& name, int in_channels, int out_channels, Shape shape,
       std::mt19937_64* rng);

  Grid<T> forward(const ParameterStore<T>& p, const Grid<T>& x) const;
  // Accumulates weight/bias gradients and returns dL/dx. `x` is the forward input.
  Grid<T> backward(const ParameterStore<T>& p, const Grid<T>& x, const Grid<T>& dy, ParameterStore<T>& grads) const;

  std::array<int, 3> output_dims(const Grid<T>& x) const;

  int in_channels = 0;
  int out_channels = 0;
  int weight = -1;
  int bias = -1;

 private:
  bool same_stride1() const;
  Grid<T> forward_shifted(const ParameterStore<T>& p, const Grid<T>& x) const;
  Grid<T> backward_shifted(const ParameterStore<T>& p, const Grid<T>& x, const Grid<T>& dy,
                           ParameterStore<T>& grads) const;
  Mat<T> im2col(const Grid<T>& x, const std::array<int, 3>& out) const;
  void col2im(const Mat<T>& cols, Grid<T>& dx, const std::array<int, 3>& out) const;

  Shape shape_;
};

// Per-channel normalization over the spatial extent, no affine terms.
template <typename T>
struct InstanceNormTape {
  Grid<T> normalized;
  std::vector<T> inv_std;
};

template <typename T>
Grid<T> instance_norm(const Grid<T>& x, InstanceNormTape<T>* tape, T eps = T(1e-5));

template <typename T>
Grid<T> instance_norm_backward(const InstanceNormTape<T>& tape, const Grid<T>& dy);

template <typename T>
Grid<T> relu(const Grid<T>& x);

// dL/dx for y = relu(x), given the forward output y.
template <typename T>
Grid<T> relu_backward(const Grid<T>& y, const Grid<T>& dy);

// Nearest-neighbour x2 upsampling along depth, height and width.
template <typename T>
Grid<T> upsample2(const Grid<T>& x);

template <typename T>
Grid<T> upsample2_backward(const Grid<T>& dy, const Grid<T>& x_shape);

// Image encoder: three 3x3 conv stages with strides 1, 2, 2 (total downsample x4). The first two
// stages use instance norm + ReLU; the last is a plain conv producing `channels` features.
template <typename T>
class FeatureExtractor {
 public:
  struct Tape {
    Grid<T> input, a1, n1, r1, a2, n2, r2;
    InstanceNormTape<T> t1, t2;
  };

  FeatureExtractor() = default;
  FeatureExtractor(ParameterStore<T>& store, const std::string& prefix, int channels, std::mt19937_64* rng);

  // image: H x W x 3 with H, W divisible by 4.
  Grid<T> forward(const ParameterStore<T>& p, const Grid<T>& image, Tape* tape = nullptr) const;
  Grid<T> backward(const ParameterStore<T>& p, const Tape& tape, const Grid<T>& dy, ParameterStore<T>& grads) const;

  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  Conv<T> c1_, c2_, c3_;
};

// Three-level 3D U-Net (downsample factor 8) with additive skip connections.
template <typename T>
class UNet3d {
 public:
  static constexpr int kDownsample = 8;

  struct Tape {
    Grid<T> input, e0, e1, e2, e3, up2, d2, s2, up1, d1, s1, up0, d0, s0;
  };

  UNet3d() = default;
  UNet3d(ParameterStore<T>& store, const std::string& prefix, int in_channels, int base_channels,
         int out_channels, std::mt19937_64* rng);

  // cost: D x h x w x in_channels with D, h, w divisible by 8.
  Grid<T> forward(const ParameterStore<T>& p, const Grid<T>& cost, Tape* tape = nullptr) const;
  Grid<T> backward(const ParameterStore<T>& p, const Tape& tape, const Grid<T>& dy, ParameterStore<T>& grads) const;

  int out_channels() const { return out_channels_; }

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  Conv<T> enc0_, enc1_, enc2_, enc3_, dec2_, dec1_, dec0_, head_;
};

}  // namespace svnerf::nn
