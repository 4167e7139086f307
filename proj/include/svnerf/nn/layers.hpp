#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "svnerf/nn/params.hpp"

namespace svnerf::nn {

enum class Activation { None, Relu, Sigmoid, Softplus };

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
Mat<T> activate(const Mat<T>& pre, Activation a);

// dL/dpre given dL/dout and the pre-activation values.
template <typename T>
Mat<T> activate_backward(const Mat<T>& pre, const Mat<T>& dout, Activation a);

struct FrequencyEmbeddingSpec {
  int input_dim = 3;
  int frequencies = 10;
  bool include_input = true;

  int output_dim() const { return input_dim * (2 * frequencies + (include_input ? 1 : 0)); }

  static FrequencyEmbeddingSpec position() { return {3, 10, true}; }
  static FrequencyEmbeddingSpec direction() { return {3, 5, true}; }
  static FrequencyEmbeddingSpec depth() { return {1, 5, true}; }
};

// Row-wise embedding. Column layout: [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x),
// cos(2^(L-1) pi x)], where each block spans all input_dim components.
template <typename T>
Mat<T> frequency_embed(const Mat<T>& x, const FrequencyEmbeddingSpec& spec);

template <typename T>
Mat<T> frequency_embed_backward(const Mat<T>& x, const Mat<T>& dy, const FrequencyEmbeddingSpec& spec);

// y = x W + b with W stored in x out layout.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, int in, int out, std::mt19937_64* rng,
         bool bias = true);

  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x) const;
  // Accumulates weight/bias gradients; returns dL/dx.
  Mat<T> backward(const ParameterStore<T>& p, const Mat<T>& x, const Mat<T>& dy, ParameterStore<T>& grads) const;

  int in = 0;
  int out = 0;
  int weight = -1;
  int bias = -1;
};

struct MlpSpec {
  std::vector<int> widths;  // input width, hidden widths..., output width
  Activation hidden = Activation::Relu;
  Activation output = Activation::None;
};

template <typename T>
class Mlp {
 public:
  struct Tape {
    std::vector<Mat<T>> inputs;  // input to each layer
    std::vector<Mat<T>> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  Mlp(ParameterStore<T>& store, const std::string& prefix, MlpSpec spec, std::mt19937_64* rng);

  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, Tape* tape = nullptr) const;
  Mat<T> backward(const ParameterStore<T>& p, const Tape& tape, const Mat<T>& dy, ParameterStore<T>& grads) const;

  int input_width() const { return spec_.widths.front(); }
  int output_width() const { return spec_.widths.back(); }
  const std::vector<Linear<T>>& layers() const { return layers_; }

 private:
  MlpSpec spec_;
  std::vector<Linear<T>> layers_;
};

}  // namespace svnerf::nn
