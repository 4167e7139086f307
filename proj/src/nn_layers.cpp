#include "svnerf/nn/layers.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace svnerf::nn {

template <typename T>
Mat<T> activate(const Mat<T>& pre, Activation a) {
  switch (a) {
    case Activation::None:
      return pre;
    case Activation::Relu:
      return pre.cwiseMax(T(0));
    case Activation::Sigmoid:
      return pre.unaryExpr([](T v) { return sigmoid(v); });
    case Activation::Softplus:
      return pre.unaryExpr([](T v) { return softplus(v); });
  }
  return pre;
}

template <typename T>
Mat<T> activate_backward(const Mat<T>& pre, const Mat<T>& dout, Activation a) {
  switch (a) {
    case Activation::None:
      return dout;
    case Activation::Relu:
      return dout.binaryExpr(pre, [](T g, T p) { return p > 0 ? g : T(0); });
    case Activation::Sigmoid:
      return dout.binaryExpr(pre, [](T g, T p) {
        const T s = sigmoid(p);
        return g * s * (1 - s);
      });
    case Activation::Softplus:
      return dout.binaryExpr(pre, [](T g, T p) { return g * sigmoid(p); });
  }
  return dout;
}

namespace {

// sin/cos of 2^l * pi * v for l = 0..L-1 from one libm call, via the double-angle identities in double precision.
inline void octave_sincos(double v, int L, double* sn, double* cs) {
  double s = std::sin(std::numbers::pi * v), c = std::cos(std::numbers::pi * v);
  for (int l = 0; l < L; ++l) {
    sn[l] = s;
    cs[l] = c;
    const double s2 = 2 * s * c, c2 = (c - s) * (c + s);
    s = s2;
    c = c2;
  }
}

}  // namespace

template <typename T>
Mat<T> frequency_embed(const Mat<T>& x, const FrequencyEmbeddingSpec& spec) {
  if (x.cols() != spec.input_dim)
    throw DomainError(fmt::format("frequency_embed: expected {} inputs, got {}", spec.input_dim, x.cols()));
  const int D = spec.input_dim, L = spec.frequencies;
  const int base = spec.include_input ? D : 0;
  Mat<T> y(x.rows(), spec.output_dim());
  std::vector<double> sn(L), cs(L);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (int d = 0; d < D; ++d) {
      if (spec.include_input) y(r, d) = x(r, d);
      octave_sincos(double(x(r, d)), L, sn.data(), cs.data());
      for (int l = 0; l < L; ++l) {
        y(r, base + 2 * D * l + d) = T(sn[l]);
        y(r, base + 2 * D * l + D + d) = T(cs[l]);
      }
    }
  }
  return y;
}

template <typename T>
Mat<T> frequency_embed_backward(const Mat<T>& x, const Mat<T>& dy, const FrequencyEmbeddingSpec& spec) {
  const int D = spec.input_dim, L = spec.frequencies;
  const int base = spec.include_input ? D : 0;
  Mat<T> dx(x.rows(), D);
  std::vector<double> sn(L), cs(L);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (int d = 0; d < D; ++d) {
      octave_sincos(double(x(r, d)), L, sn.data(), cs.data());
      double acc = spec.include_input ? double(dy(r, d)) : 0.0;
      for (int l = 0; l < L; ++l) {
        const double scale = std::ldexp(std::numbers::pi, l);
        acc += scale * (cs[l] * double(dy(r, base + 2 * D * l + d)) - sn[l] * double(dy(r, base + 2 * D * l + D + d)));
      }
      dx(r, d) = T(acc);
    }
  }
  return dx;
}

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, int in_, int out_, std::mt19937_64* rng,
                  bool with_bias)
    : in(in_), out(out_) {
  weight = store.add(name + ".weight", {in, out});
  if (with_bias) bias = store.add(name + ".bias", {out});
  if (rng) kaiming_uniform(store.values(weight), in, *rng);
}

template <typename T>
Mat<T> Linear<T>::forward(const ParameterStore<T>& p, const Mat<T>& x) const {
  if (x.cols() != in) throw DomainError(fmt::format("linear layer expects width {}, got {}", in, x.cols()));
  Mat<T> y = x * p.matrix(weight);
  if (bias >= 0) y.rowwise() += p.vector(bias).transpose();
  return y;
}

template <typename T>
Mat<T> Linear<T>::backward(const ParameterStore<T>& p, const Mat<T>& x, const Mat<T>& dy,
                           ParameterStore<T>& grads) const {
  grads.matrix(weight).noalias() += x.transpose() * dy;
  if (bias >= 0) grads.vector(bias) += column_sums(dy).transpose();
  return dy * p.matrix(weight).transpose();
}

template <typename T>
Mlp<T>::Mlp(ParameterStore<T>& store, const std::string& prefix, MlpSpec spec, std::mt19937_64* rng)
    : spec_(std::move(spec)) {
  if (spec_.widths.size() < 2) throw DomainError("MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < spec_.widths.size(); ++i)
    layers_.emplace_back(store, fmt::format("{}.{}", prefix, i), spec_.widths[i], spec_.widths[i + 1], rng);
}

template <typename T>
Mat<T> Mlp<T>::forward(const ParameterStore<T>& p, const Mat<T>& x, Tape* tape) const {
  if (x.cols() != input_width())
    throw DomainError(fmt::format("MLP expects width {}, got {}", input_width(), x.cols()));
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Mat<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Mat<T> pre = layers_[i].forward(p, h);
    const Activation a = i + 1 == layers_.size() ? spec_.output : spec_.hidden;
    Mat<T> next = activate(pre, a);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(std::move(pre));
    }
    h = std::move(next);
  }
  return h;
}

template <typename T>
Mat<T> Mlp<T>::backward(const ParameterStore<T>& p, const Tape& tape, const Mat<T>& dy,
                        ParameterStore<T>& grads) const {
  Mat<T> g = dy;
  for (int i = int(layers_.size()) - 1; i >= 0; --i) {
    const Activation a = i + 1 == int(layers_.size()) ? spec_.output : spec_.hidden;
    g = activate_backward(tape.pre[i], g, a);
    g = layers_[i].backward(p, tape.inputs[i], g, grads);
  }
  return g;
}

template Mat<float> activate<float>(const Mat<float>&, Activation);
template Mat<double> activate<double>(const Mat<double>&, Activation);
template Mat<float> activate_backward<float>(const Mat<float>&, const Mat<float>&, Activation);
template Mat<double> activate_backward<double>(const Mat<double>&, const Mat<double>&, Activation);
template Mat<float> frequency_embed<float>(const Mat<float>&, const FrequencyEmbeddingSpec&);
template Mat<double> frequency_embed<double>(const Mat<double>&, const FrequencyEmbeddingSpec&);
template Mat<float> frequency_embed_backward<float>(const Mat<float>&, const Mat<float>&,
                                                    const FrequencyEmbeddingSpec&);
template Mat<double> frequency_embed_backward<double>(const Mat<double>&, const Mat<double>&,
                                                      const FrequencyEmbeddingSpec&);
template class Linear<float>;
template class Linear<double>;
template class Mlp<float>;
template class Mlp<double>;

}  // namespace svnerf::nn
