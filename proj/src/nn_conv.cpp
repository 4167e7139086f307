#include "svnerf/nn/conv.hpp"

#include <cmath>
#include <cstring>

#include <fmt/format.h>

namespace svnerf::nn {

template <typename T>
Conv<T>::Conv(ParameterStore<T>& store, const std::string& name, int in_ch, int out_ch, Shape shape,
              std::mt19937_64* rng)
    : in_channels(in_ch), out_channels(out_ch), shape_(shape) {
  const int taps = shape.kernel[0] * shape.kernel[1] * shape.kernel[2];
  weight = store.add(name + ".weight", {taps * in_ch, out_ch});
  bias = store.add(name + ".bias", {out_ch});
  if (rng) kaiming_uniform(store.values(weight), taps * in_ch, *rng);
}

template <typename T>
std::array<int, 3> Conv<T>::output_dims(const Grid<T>& x) const {
  const std::array<int, 3> in{x.depth, x.height, x.width};
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const int span = in[a] + 2 * shape_.padding[a] - shape_.kernel[a];
    if (span < 0) throw DomainError("convolution input smaller than kernel");
    out[a] = span / shape_.stride[a] + 1;
  }
  return out;
}

template <typename T>
Mat<T> Conv<T>::im2col(const Grid<T>& x, const std::array<int, 3>& out) const {
  const auto& k = shape_.kernel;
  const auto& s = shape_.stride;
  const auto& pad = shape_.padding;
  const int C = in_channels;
  const Eigen::Index rows = Eigen::Index(out[0]) * out[1] * out[2];
  Mat<T> cols(rows, k[0] * k[1] * k[2] * C);
  Eigen::Index r = 0;
  for (int od = 0; od < out[0]; ++od) {
    for (int oy = 0; oy < out[1]; ++oy) {
      for (int ox = 0; ox < out[2]; ++ox, ++r) {
        T* dst = cols.data() + r * cols.cols();
        for (int kd = 0; kd < k[0]; ++kd) {
          const int id = od * s[0] - pad[0] + kd;
          for (int ky = 0; ky < k[1]; ++ky) {
            const int iy = oy * s[1] - pad[1] + ky;
            for (int kx = 0; kx < k[2]; ++kx, dst += C) {
              const int ix = ox * s[2] - pad[2] + kx;
              if (id < 0 || id >= x.depth || iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) {
                std::fill(dst, dst + C, T(0));
              } else {
                std::memcpy(dst, x.voxel(id, iy, ix), sizeof(T) * C);
              }
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void Conv<T>::col2im(const Mat<T>& cols, Grid<T>& dx, const std::array<int, 3>& out) const {
  const auto& k = shape_.kernel;
  const auto& s = shape_.stride;
  const auto& pad = shape_.padding;
  const int C = in_channels;
  Eigen::Index r = 0;
  for (int od = 0; od < out[0]; ++od) {
    for (int oy = 0; oy < out[1]; ++oy) {
      for (int ox = 0; ox < out[2]; ++ox, ++r) {
        const T* src = cols.data() + r * cols.cols();
        for (int kd = 0; kd < k[0]; ++kd) {
          const int id = od * s[0] - pad[0] + kd;
          for (int ky = 0; ky < k[1]; ++ky) {
            const int iy = oy * s[1] - pad[1] + ky;
            for (int kx = 0; kx < k[2]; ++kx, src += C) {
              const int ix = ox * s[2] - pad[2] + kx;
              if (id < 0 || id >= dx.depth || iy < 0 || iy >= dx.height || ix < 0 || ix >= dx.width) continue;
              T* d = dx.voxel(id, iy, ix);
              for (int c = 0; c < C; ++c) d[c] += src[c];
            }
          }
        }
      }
    }
  }
}

namespace {

// Zero-padded copy of x, flattened to rows.
template <typename T>
Grid<T> pad_grid(const Grid<T>& x, const std::array<int, 3>& pad) {
  Grid<T> out(x.depth + 2 * pad[0], x.height + 2 * pad[1], x.width + 2 * pad[2], x.channels);
  for (int d = 0; d < x.depth; ++d)
    for (int y = 0; y < x.height; ++y)
      std::memcpy(out.voxel(d + pad[0], y + pad[1], pad[2]), x.voxel(d, y, 0), sizeof(T) * x.width * x.channels);
  return out;
}

}  // namespace

template <typename T>
bool Conv<T>::same_stride1() const {
  for (int a = 0; a < 3; ++a)
    if (shape_.stride[a] != 1 || 2 * shape_.padding[a] + 1 != shape_.kernel[a]) return false;
  return true;
}

// For stride-1 "same" convolutions every tap is a constant row offset in the padded grid, so the
// convolution is a sum of one GEMM per tap over a contiguous row range.
template <typename T>
Grid<T> Conv<T>::forward_shifted(const ParameterStore<T>& p, const Grid<T>& x) const {
  const auto& k = shape_.kernel;
  const auto& pad = shape_.padding;
  const Grid<T> P = pad_grid(x, pad);
  const Eigen::Index Hp = P.height, Wp = P.width, total = Eigen::Index(P.voxels());
  const Eigen::Index lo = (pad[0] * Hp + pad[1]) * Wp + pad[2], n = total - 2 * lo;
  const auto pr = P.rows();
  const auto W = p.matrix(weight);
  Mat<T> acc = Mat<T>::Zero(n, out_channels);
  int tap = 0;
  for (int kd = 0; kd < k[0]; ++kd)
    for (int ky = 0; ky < k[1]; ++ky)
      for (int kx = 0; kx < k[2]; ++kx, ++tap) {
        const Eigen::Index off = ((kd - pad[0]) * Hp + (ky - pad[1])) * Wp + (kx - pad[2]);
        acc.noalias() += pr.middleRows(lo + off, n) * W.middleRows(Eigen::Index(tap) * in_channels, in_channels);
      }
  Grid<T> y(x.depth, x.height, x.width, out_channels);
  const auto b = p.vector(bias);
  for (int d = 0; d < x.depth; ++d)
    for (int yy = 0; yy < x.height; ++yy)
      for (int xx = 0; xx < x.width; ++xx) {
        const Eigen::Index r = ((d + pad[0]) * Hp + yy + pad[1]) * Wp + xx + pad[2] - lo;
        T* dst = y.voxel(d, yy, xx);
        for (int c = 0; c < out_channels; ++c) dst[c] = acc(r, c) + b[c];
      }
  return y;
}

template <typename T>
Grid<T> Conv<T>::backward_shifted(const ParameterStore<T>& p, const Grid<T>& x, const Grid<T>& dy,
                                  ParameterStore<T>& grads) const {
  const auto& k = shape_.kernel;
  const auto& pad = shape_.padding;
  const Grid<T> P = pad_grid(x, pad);
  const Grid<T> dYp = pad_grid(dy, pad);
  const Eigen::Index Hp = P.height, Wp = P.width, total = Eigen::Index(P.voxels());
  const Eigen::Index lo = (pad[0] * Hp + pad[1]) * Wp + pad[2], n = total - 2 * lo;
  const auto pr = P.rows();
  const auto dyr = dYp.rows().middleRows(lo, n);
  const auto W = p.matrix(weight);
  auto dW = grads.matrix(weight);
  Grid<T> dP(P.depth, P.height, P.width, in_channels);
  auto dpr = dP.rows();
  int tap = 0;
  for (int kd = 0; kd < k[0]; ++kd)
    for (int ky = 0; ky < k[1]; ++ky)
      for (int kx = 0; kx < k[2]; ++kx, ++tap) {
        const Eigen::Index off = ((kd - pad[0]) * Hp + (ky - pad[1])) * Wp + (kx - pad[2]);
        const Eigen::Index wr = Eigen::Index(tap) * in_channels;
        dW.middleRows(wr, in_channels).noalias() += pr.middleRows(lo + off, n).transpose() * dyr;
        dpr.middleRows(lo + off, n).noalias() += dyr * W.middleRows(wr, in_channels).transpose();
      }
  grads.vector(bias) += column_sums(dy.rows()).transpose();
  Grid<T> dx(x.depth, x.height, x.width, x.channels);
  for (int d = 0; d < x.depth; ++d)
    for (int yy = 0; yy < x.height; ++yy)
      std::memcpy(dx.voxel(d, yy, 0), dP.voxel(d + pad[0], yy + pad[1], pad[2]), sizeof(T) * x.width * x.channels);
  return dx;
}

template <typename T>
Grid<T> Conv<T>::forward(const ParameterStore<T>& p, const Grid<T>& x) const {
  if (x.channels != in_channels)
    throw DomainError(fmt::format("conv expects {} channels, got {}", in_channels, x.channels));
  if (same_stride1()) return forward_shifted(p, x);
  const auto out = output_dims(x);
  const Mat<T> cols = im2col(x, out);
  Grid<T> y(out[0], out[1], out[2], out_channels);
  auto yr = y.rows();
  yr.noalias() = cols * p.matrix(weight);
  yr.rowwise() += p.vector(bias).transpose();
  return y;
}

template <typename T>
Grid<T> Conv<T>::backward(const ParameterStore<T>& p, const Grid<T>& x, const Grid<T>& dy,
                          ParameterStore<T>& grads) const {
  if (same_stride1()) return backward_shifted(p, x, dy, grads);
  const auto out = output_dims(x);
  const Mat<T> cols = im2col(x, out);
  const auto dyr = dy.rows();
  grads.matrix(weight).noalias() += cols.transpose() * dyr;
  grads.vector(bias) += column_sums(dyr).transpose();
  const Mat<T> dcols = dyr * p.matrix(weight).transpose();
  Grid<T> dx(x.depth, x.height, x.width, x.channels);
  col2im(dcols, dx, out);
  return dx;
}

template <typename T>
Grid<T> instance_norm(const Grid<T>& x, InstanceNormTape<T>* tape, T eps) {
  const int C = x.channels;
  const std::size_t n = x.voxels();
  Grid<T> y(x.depth, x.height, x.width, C);
  std::vector<T> inv_std(C);
  const auto xr = x.rows();
  auto yr = y.rows();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> mean = column_sums(xr) / T(n);
  Eigen::Matrix<T, 1, Eigen::Dynamic> var = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(C);
  for (Eigen::Index r = 0; r < xr.rows(); ++r) var.array() += (xr.row(r) - mean).array().square();
  for (int c = 0; c < C; ++c) {
    inv_std[c] = T(1) / std::sqrt(var[c] / T(n) + eps);
    yr.col(c) = (xr.col(c).array() - mean[c]) * inv_std[c];
  }
  if (tape) {
    tape->normalized = y;
    tape->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Grid<T> instance_norm_backward(const InstanceNormTape<T>& tape, const Grid<T>& dy) {
  const auto& xh = tape.normalized;
  Grid<T> dx(xh.depth, xh.height, xh.width, xh.channels);
  const auto xr = xh.rows();
  const auto dyr = dy.rows();
  auto dxr = dx.rows();
  const T n = T(xh.voxels());
  const Eigen::Matrix<T, 1, Eigen::Dynamic> mean_dy = column_sums(dyr) / n;
  const Eigen::Matrix<T, 1, Eigen::Dynamic> mean_dyx = column_sums(dyr.cwiseProduct(xr)) / n;
  for (int c = 0; c < xh.channels; ++c)
    dxr.col(c) = tape.inv_std[c] * (dyr.col(c).array() - mean_dy[c] - xr.col(c).array() * mean_dyx[c]);
  return dx;
}

template <typename T>
Grid<T> relu(const Grid<T>& x) {
  Grid<T> y = x;
  for (auto& v : y.data) v = v > 0 ? v : T(0);
  return y;
}

template <typename T>
Grid<T> relu_backward(const Grid<T>& y, const Grid<T>& dy) {
  Grid<T> dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (!(y.data[i] > 0)) dx.data[i] = 0;
  return dx;
}

template <typename T>
Grid<T> upsample2(const Grid<T>& x) {
  Grid<T> y(x.depth * 2, x.height * 2, x.width * 2, x.channels);
  for (int d = 0; d < y.depth; ++d)
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx)
        std::memcpy(y.voxel(d, yy, xx), x.voxel(d / 2, yy / 2, xx / 2), sizeof(T) * x.channels);
  return y;
}

template <typename T>
Grid<T> upsample2_backward(const Grid<T>& dy, const Grid<T>& x_shape) {
  Grid<T> dx(x_shape.depth, x_shape.height, x_shape.width, x_shape.channels);
  for (int d = 0; d < dy.depth; ++d)
    for (int yy = 0; yy < dy.height; ++yy)
      for (int xx = 0; xx < dy.width; ++xx) {
        const T* src = dy.voxel(d, yy, xx);
        T* dst = dx.voxel(d / 2, yy / 2, xx / 2);
        for (int c = 0; c < dy.channels; ++c) dst[c] += src[c];
      }
  return dx;
}

template <typename T>
FeatureExtractor<T>::FeatureExtractor(ParameterStore<T>& store, const std::string& prefix, int channels,
                                      std::mt19937_64* rng)
    : channels_(channels) {
  const int first = std::max(4, channels / 2);
  c1_ = Conv<T>(store, prefix + ".conv0", 3, first, Conv<T>::conv2d(1), rng);
  c2_ = Conv<T>(store, prefix + ".conv1", first, channels, Conv<T>::conv2d(2), rng);
  c3_ = Conv<T>(store, prefix + ".conv2", channels, channels, Conv<T>::conv2d(2), rng);
}

template <typename T>
Grid<T> FeatureExtractor<T>::forward(const ParameterStore<T>& p, const Grid<T>& image, Tape* tape) const {
  if (image.depth != 1 || image.channels != 3) throw DomainError("feature extractor expects an RGB image");
  if (image.height % 4 != 0 || image.width % 4 != 0)
    throw DomainError(fmt::format("image size {}x{} is not divisible by 4", image.height, image.width));
  Tape local;
  Tape& t = tape ? *tape : local;
  t.input = image;
  t.a1 = c1_.forward(p, image);
  t.n1 = instance_norm(t.a1, &t.t1);
  t.r1 = relu(t.n1);
  t.a2 = c2_.forward(p, t.r1);
  t.n2 = instance_norm(t.a2, &t.t2);
  t.r2 = relu(t.n2);
  return c3_.forward(p, t.r2);
}

template <typename T>
Grid<T> FeatureExtractor<T>::backward(const ParameterStore<T>& p, const Tape& t, const Grid<T>& dy,
                                      ParameterStore<T>& grads) const {
  Grid<T> g = c3_.backward(p, t.r2, dy, grads);
  g = instance_norm_backward(t.t2, relu_backward(t.r2, g));
  g = c2_.backward(p, t.r1, g, grads);
  g = instance_norm_backward(t.t1, relu_backward(t.r1, g));
  return c1_.backward(p, t.input, g, grads);
}

template <typename T>
UNet3d<T>::UNet3d(ParameterStore<T>& store, const std::string& prefix, int in_channels, int base, int out_channels,
                  std::mt19937_64* rng)
    : in_channels_(in_channels), out_channels_(out_channels) {
  enc0_ = Conv<T>(store, prefix + ".enc0", in_channels, base, Conv<T>::conv3d(1), rng);
  enc1_ = Conv<T>(store, prefix + ".enc1", base, 2 * base, Conv<T>::conv3d(2), rng);
  enc2_ = Conv<T>(store, prefix + ".enc2", 2 * base, 4 * base, Conv<T>::conv3d(2), rng);
  enc3_ = Conv<T>(store, prefix + ".enc3", 4 * base, 8 * base, Conv<T>::conv3d(2), rng);
  dec2_ = Conv<T>(store, prefix + ".dec2", 8 * base, 4 * base, Conv<T>::conv3d(1), rng);
  dec1_ = Conv<T>(store, prefix + ".dec1", 4 * base, 2 * base, Conv<T>::conv3d(1), rng);
  dec0_ = Conv<T>(store, prefix + ".dec0", 2 * base, base, Conv<T>::conv3d(1), rng);
  head_ = Conv<T>(store, prefix + ".head", base, out_channels, Conv<T>::conv3d(1), rng);
}

namespace {

template <typename T>
Grid<T> add(const Grid<T>& a, const Grid<T>& b) {
  Grid<T> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace

template <typename T>
Grid<T> UNet3d<T>::forward(const ParameterStore<T>& p, const Grid<T>& cost, Tape* tape) const {
  if (cost.channels != in_channels_)
    throw DomainError(fmt::format("U-Net expects {} channels, got {}", in_channels_, cost.channels));
  if (cost.depth % kDownsample || cost.height % kDownsample || cost.width % kDownsample)
    throw DomainError(fmt::format("U-Net input {}x{}x{} is not divisible by {}", cost.depth, cost.height,
                                  cost.width, kDownsample));
  Tape local;
  Tape& t = tape ? *tape : local;
  t.input = cost;
  t.e0 = relu(enc0_.forward(p, cost));
  t.e1 = relu(enc1_.forward(p, t.e0));
  t.e2 = relu(enc2_.forward(p, t.e1));
  t.e3 = relu(enc3_.forward(p, t.e2));
  t.up2 = upsample2(t.e3);
  t.d2 = relu(dec2_.forward(p, t.up2));
  t.s2 = add(t.e2, t.d2);
  t.up1 = upsample2(t.s2);
  t.d1 = relu(dec1_.forward(p, t.up1));
  t.s1 = add(t.e1, t.d1);
  t.up0 = upsample2(t.s1);
  t.d0 = relu(dec0_.forward(p, t.up0));
  t.s0 = add(t.e0, t.d0);
  return head_.forward(p, t.s0);
}

template <typename T>
Grid<T> UNet3d<T>::backward(const ParameterStore<T>& p, const Tape& t, const Grid<T>& dy,
                            ParameterStore<T>& grads) const {
  // ds0 feeds both the skip (e0) and the decoder branch (d0).
  const Grid<T> ds0 = head_.backward(p, t.s0, dy, grads);
  Grid<T> ds1 = upsample2_backward(dec0_.backward(p, t.up0, relu_backward(t.d0, ds0), grads), t.s1);
  Grid<T> de0_extra = ds0;
  Grid<T> de1 = ds1;
  Grid<T> ds2 = upsample2_backward(dec1_.backward(p, t.up1, relu_backward(t.d1, ds1), grads), t.s2);
  Grid<T> de2 = ds2;
  const Grid<T> de3 = upsample2_backward(dec2_.backward(p, t.up2, relu_backward(t.d2, ds2), grads), t.e3);

  de2 = add(de2, enc3_.backward(p, t.e2, relu_backward(t.e3, de3), grads));
  de1 = add(de1, enc2_.backward(p, t.e1, relu_backward(t.e2, de2), grads));
  de0_extra = add(de0_extra, enc1_.backward(p, t.e0, relu_backward(t.e1, de1), grads));
  return enc0_.backward(p, t.input, relu_backward(t.e0, de0_extra), grads);
}

template class Conv<float>;
template class Conv<double>;
template Grid<float> instance_norm<float>(const Grid<float>&, InstanceNormTape<float>*, float);
template Grid<double> instance_norm<double>(const Grid<double>&, InstanceNormTape<double>*, double);
template Grid<float> instance_norm_backward<float>(const InstanceNormTape<float>&, const Grid<float>&);
template Grid<double> instance_norm_backward<double>(const InstanceNormTape<double>&, const Grid<double>&);
template Grid<float> relu<float>(const Grid<float>&);
template Grid<double> relu<double>(const Grid<double>&);
template Grid<float> relu_backward<float>(const Grid<float>&, const Grid<float>&);
template Grid<double> relu_backward<double>(const Grid<double>&, const Grid<double>&);
template Grid<float> upsample2<float>(const Grid<float>&);
template Grid<double> upsample2<double>(const Grid<double>&);
template Grid<float> upsample2_backward<float>(const Grid<float>&, const Grid<float>&);
template Grid<double> upsample2_backward<double>(const Grid<double>&, const Grid<double>&);
template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template class UNet3d<float>;
template class UNet3d<double>;

}  // namespace svnerf::nn
