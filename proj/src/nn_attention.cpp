#include "svnerf/nn/attention.hpp"

#include <cmath>

#include <fmt/format.h>

namespace svnerf::nn {

void AttentionConfig::validate() const {
  if (heads <= 0 || model_dim <= 0 || model_dim % heads != 0)
    throw DomainError(fmt::format("attention model_dim {} not divisible by {} heads", model_dim, heads));
  if (query_dim <= 0 || key_dim <= 0 || value_dim <= 0 || output_dim <= 0)
    throw DomainError("attention dims must be positive");
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterStore<T>& store, const std::string& prefix,
                                          AttentionConfig cfg, std::mt19937_64* rng)
    : cfg_(cfg) {
  cfg_.validate();
  wq_ = store.add(prefix + ".wq", {cfg_.query_dim, cfg_.model_dim});
  wk_ = store.add(prefix + ".wk", {cfg_.key_dim, cfg_.model_dim});
  wv_ = store.add(prefix + ".wv", {cfg_.value_dim, cfg_.model_dim});
  wo_ = store.add(prefix + ".wo", {cfg_.model_dim, cfg_.output_dim});
  if (rng) {
    xavier_uniform(store.values(wq_), cfg_.query_dim, cfg_.model_dim, *rng);
    xavier_uniform(store.values(wk_), cfg_.key_dim, cfg_.model_dim, *rng);
    xavier_uniform(store.values(wv_), cfg_.value_dim, cfg_.model_dim, *rng);
    xavier_uniform(store.values(wo_), cfg_.model_dim, cfg_.output_dim, *rng);
  }
}

template <typename T>
Mat<T> MultiHeadAttention<T>::forward(const ParameterStore<T>& p, const Mat<T>& q, const Mat<T>& k,
                                      const Mat<T>& v, int groups, Tape* tape) const {
  if (groups <= 0) throw DomainError("attention needs at least one group");
  if (q.cols() != cfg_.query_dim || k.cols() != cfg_.key_dim || v.cols() != cfg_.value_dim)
    throw DomainError(fmt::format("attention input widths ({}, {}, {}) do not match config ({}, {}, {})",
                                  q.cols(), k.cols(), v.cols(), cfg_.query_dim, cfg_.key_dim, cfg_.value_dim));
  if (k.rows() != v.rows() || k.rows() % groups != 0 || q.rows() % groups != 0 || k.rows() == 0)
    throw DomainError("attention token counts are inconsistent with the group count");

  const int nq = int(q.rows() / groups);
  const int nkv = int(k.rows() / groups);
  const int H = cfg_.heads;
  const int dk = cfg_.head_dim();
  const int dm = cfg_.model_dim;
  const T scale = T(1) / std::sqrt(T(dk));

  Mat<T> qp = q * p.matrix(wq_);
  Mat<T> kp = k * p.matrix(wk_);
  Mat<T> vp = v * p.matrix(wv_);
  Mat<T> heads = Mat<T>::Zero(q.rows(), dm);
  std::vector<T> weights(std::size_t(groups) * H * nq * nkv);
  std::vector<T> logits(nkv);

  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < nq; ++i) {
        const T* qrow = qp.data() + (Eigen::Index(g) * nq + i) * dm + h * dk;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < nkv; ++j) {
          const T* krow = kp.data() + (Eigen::Index(g) * nkv + j) * dm + h * dk;
          T acc = 0;
          for (int c = 0; c < dk; ++c) acc += qrow[c] * krow[c];
          logits[j] = acc * scale;
          mx = std::max(mx, logits[j]);
        }
        T sum = 0;
        for (int j = 0; j < nkv; ++j) {
          logits[j] = std::exp(logits[j] - mx);
          sum += logits[j];
        }
        T* wrow = weights.data() + ((std::size_t(g) * H + h) * nq + i) * nkv;
        T* out = heads.data() + (Eigen::Index(g) * nq + i) * dm + h * dk;
        for (int j = 0; j < nkv; ++j) {
          const T a = logits[j] / sum;
          wrow[j] = a;
          const T* vrow = vp.data() + (Eigen::Index(g) * nkv + j) * dm + h * dk;
          for (int c = 0; c < dk; ++c) out[c] += a * vrow[c];
        }
      }
    }
  }

  Mat<T> out = heads * p.matrix(wo_);
  if (tape) {
    tape->q = q;
    tape->k = k;
    tape->v = v;
    tape->qp = std::move(qp);
    tape->kp = std::move(kp);
    tape->vp = std::move(vp);
    tape->heads = std::move(heads);
    tape->weights = std::move(weights);
    tape->groups = groups;
    tape->queries = nq;
    tape->tokens = nkv;
  }
  return out;
}

template <typename T>
typename MultiHeadAttention<T>::InputGrads MultiHeadAttention<T>::backward(const ParameterStore<T>& p,
                                                                           const Tape& t, const Mat<T>& dout,
                                                                           ParameterStore<T>& grads) const {
  const int H = cfg_.heads;
  const int dk = cfg_.head_dim();
  const int dm = cfg_.model_dim;
  const int nq = t.queries, nkv = t.tokens;
  const T scale = T(1) / std::sqrt(T(dk));

  grads.matrix(wo_).noalias() += t.heads.transpose() * dout;
  const Mat<T> dheads = dout * p.matrix(wo_).transpose();

  Mat<T> dqp = Mat<T>::Zero(t.qp.rows(), dm);
  Mat<T> dkp = Mat<T>::Zero(t.kp.rows(), dm);
  Mat<T> dvp = Mat<T>::Zero(t.vp.rows(), dm);
  std::vector<T> dlogit(nkv);

  for (int g = 0; g < t.groups; ++g) {
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < nq; ++i) {
        const Eigen::Index qi = Eigen::Index(g) * nq + i;
        const T* dh = dheads.data() + qi * dm + h * dk;
        const T* qrow = t.qp.data() + qi * dm + h * dk;
        T* dqrow = dqp.data() + qi * dm + h * dk;
        const T* wrow = t.weights.data() + ((std::size_t(g) * H + h) * nq + i) * nkv;
        T dot = 0;
        for (int j = 0; j < nkv; ++j) {
          const Eigen::Index kj = Eigen::Index(g) * nkv + j;
          const T* vrow = t.vp.data() + kj * dm + h * dk;
          T* dvrow = dvp.data() + kj * dm + h * dk;
          T da = 0;
          for (int c = 0; c < dk; ++c) {
            da += dh[c] * vrow[c];
            dvrow[c] += wrow[j] * dh[c];
          }
          dlogit[j] = da;
          dot += wrow[j] * da;
        }
        for (int j = 0; j < nkv; ++j) {
          const Eigen::Index kj = Eigen::Index(g) * nkv + j;
          const T dl = wrow[j] * (dlogit[j] - dot) * scale;
          const T* krow = t.kp.data() + kj * dm + h * dk;
          T* dkrow = dkp.data() + kj * dm + h * dk;
          for (int c = 0; c < dk; ++c) {
            dqrow[c] += dl * krow[c];
            dkrow[c] += dl * qrow[c];
          }
        }
      }
    }
  }

  grads.matrix(wq_).noalias() += t.q.transpose() * dqp;
  grads.matrix(wk_).noalias() += t.k.transpose() * dkp;
  grads.matrix(wv_).noalias() += t.v.transpose() * dvp;
  return {dqp * p.matrix(wq_).transpose(), dkp * p.matrix(wk_).transpose(), dvp * p.matrix(wv_).transpose()};
}

template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;

}  // namespace svnerf::nn
