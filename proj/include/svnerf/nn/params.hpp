#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "svnerf/tensor.hpp"

namespace svnerf::nn {

// Named, shaped parameter arrays in registration order. The same type doubles as the
// gradient accumulator (see zeros_like).
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<T> values;
  };

  int add(std::string name, std::vector<int> shape);

  int size() const { return static_cast<int>(entries_.size()); }
  int find(const std::string& name) const;  // -1 when absent
  const Entry& entry(int i) const { return entries_[i]; }
  const std::string& name(int i) const { return entries_[i].name; }
  std::vector<T>& values(int i) { return entries_[i].values; }
  const std::vector<T>& values(int i) const { return entries_[i].values; }

  // First dim as rows, remaining dims flattened into columns.
  Eigen::Map<Mat<T>> matrix(int i);
  Eigen::Map<const Mat<T>> matrix(int i) const;
  Eigen::Map<Vec<T>> vector(int i) { return {entries_[i].values.data(), Eigen::Index(entries_[i].values.size())}; }
  Eigen::Map<const Vec<T>> vector(int i) const {
    return {entries_[i].values.data(), Eigen::Index(entries_[i].values.size())};
  }

  std::size_t scalar_count() const;
  ParameterStore zeros_like() const;
  void zero();
  bool all_finite() const;
  // L2 norm over every entry whose name starts with `prefix`.
  double norm(const std::string& prefix = "") const;

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& e : entries_) {
      const int i = out.add(e.name, e.shape);
      for (std::size_t k = 0; k < e.values.size(); ++k) out.values(i)[k] = static_cast<U>(e.values[k]);
    }
    return out;
  }

  bool operator==(const ParameterStore& o) const;

 private:
  std::vector<Entry> entries_;
};

// Kaiming-uniform (ReLU gain) over fan_in.
template <typename T>
void kaiming_uniform(std::vector<T>& values, int fan_in, std::mt19937_64& rng);

template <typename T>
void xavier_uniform(std::vector<T>& values, int fan_in, int fan_out, std::mt19937_64& rng);

}  // namespace svnerf::nn
