#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "svnerf/errors.hpp"

namespace svnerf {

// Row-major dynamic matrix; rows are tokens/samples, columns are features.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Reductions with a fixed order. Eigen's vectorized reductions peel to the data's alignment, so
// their rounding can change with the heap address; these only use element-wise vector ops.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> column_sums(const Eigen::MatrixBase<Derived>& m) {
  Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> s =
      Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic>::Zero(m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) s += m.row(r);
  return s;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> row_sums(const Eigen::MatrixBase<Derived>& m) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> s(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    typename Derived::Scalar acc(0);
    for (Eigen::Index c = 0; c < m.cols(); ++c) acc += m(r, c);
    s[r] = acc;
  }
  return s;
}

// Dense channels-last grid of shape depth x height x width x channels.
// 2D feature maps and images use depth == 1.
template <typename T>
struct Grid {
  int depth = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int d, int h, int w, int c, T fill = T(0))
      : depth(d), height(h), width(w), channels(c), data(static_cast<std::size_t>(d) * h * w * c, fill) {
    if (d < 0 || h < 0 || w < 0 || c < 0) throw DomainError("Grid: negative dimension");
  }

  static Grid image(int h, int w, int c, T fill = T(0)) { return Grid(1, h, w, c, fill); }

  std::size_t size() const { return data.size(); }
  std::size_t voxels() const { return static_cast<std::size_t>(depth) * height * width; }

  std::size_t index(int d, int y, int x, int c = 0) const {
    return ((static_cast<std::size_t>(d) * height + y) * width + x) * channels + c;
  }
  T& at(int d, int y, int x, int c) { return data[index(d, y, x, c)]; }
  const T& at(int d, int y, int x, int c) const { return data[index(d, y, x, c)]; }
  // 2D accessors for depth == 1 grids.
  T& operator()(int y, int x, int c) { return data[index(0, y, x, c)]; }
  const T& operator()(int y, int x, int c) const { return data[index(0, y, x, c)]; }

  T* voxel(int d, int y, int x) { return data.data() + index(d, y, x, 0); }
  const T* voxel(int d, int y, int x) const { return data.data() + index(d, y, x, 0); }

  bool same_shape(const Grid& o) const {
    return depth == o.depth && height == o.height && width == o.width && channels == o.channels;
  }

  // Voxels as rows, channels as columns.
  Eigen::Map<Mat<T>> rows() { return {data.data(), static_cast<Eigen::Index>(voxels()), channels}; }
  Eigen::Map<const Mat<T>> rows() const {
    return {data.data(), static_cast<Eigen::Index>(voxels()), channels};
  }

  template <typename U>
  Grid<U> cast() const {
    Grid<U> out(depth, height, width, channels);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Image = Grid<float>;

}  // namespace svnerf
