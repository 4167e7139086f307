#pragma once

#include <random>
#include <string>
#include <vector>

#include "svnerf/nn/params.hpp"

namespace svnerf::nn {

struct AttentionConfig {
  int heads = 4;
  int model_dim = 64;
  int query_dim = 64;
  int key_dim = 64;
  int value_dim = 64;
  int output_dim = 64;

  int head_dim() const { return model_dim / heads; }
  void validate() const;
};

// Multi-head scaled dot-product attention, evaluated independently per group (one group per
// ray). Softmax runs across the key tokens of a group, so each query's weights over that
// group's tokens sum to one.
//   head_i = softmax(Q Wq_i (K Wk_i)^T / sqrt(d_k)) V Wv_i
//   out    = [head_1 ... head_h] Wo
template <typename T>
class MultiHeadAttention {
 public:
  struct Tape {
    Mat<T> q, k, v;
    Mat<T> qp, kp, vp;
    Mat<T> heads;
    std::vector<T> weights;  // [group][head][query][key]
    int groups = 0;
    int queries = 0;  // per group
    int tokens = 0;   // keys per group
  };

  struct InputGrads {
    Mat<T> dq, dk, dv;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& prefix, AttentionConfig cfg,
                     std::mt19937_64* rng);

  // q: (groups * nq) x query_dim, k: (groups * nkv) x key_dim, v: (groups * nkv) x value_dim.
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int groups,
                 Tape* tape = nullptr) const;

  InputGrads backward(const ParameterStore<T>& p, const Tape& tape, const Mat<T>& dout,
                      ParameterStore<T>& grads) const;

  const AttentionConfig& config() const { return cfg_; }
  int wq() const { return wq_; }
  int wk() const { return wk_; }
  int wv() const { return wv_; }
  int wo() const { return wo_; }

  static T weight(const Tape& t, int group, int head, int query, int key, int heads) {
    return t.weights[((std::size_t(group) * heads + head) * t.queries + query) * t.tokens + key];
  }

 private:
  AttentionConfig cfg_;
  int wq_ = -1, wk_ = -1, wv_ = -1, wo_ = -1;
};

}  // namespace svnerf::nn
