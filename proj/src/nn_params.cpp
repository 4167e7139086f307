#include "svnerf/nn/params.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>

namespace svnerf::nn {

template <typename T>
int ParameterStore<T>::add(std::string name, std::vector<int> shape) {
  if (find(name) >= 0) throw DomainError(fmt::format("duplicate parameter '{}'", name));
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DomainError(fmt::format("parameter '{}' has a non-positive dimension", name));
    n *= static_cast<std::size_t>(d);
  }
  entries_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
  return size() - 1;
}

template <typename T>
int ParameterStore<T>::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (entries_[i].name == name) return i;
  return -1;
}

template <typename T>
Eigen::Map<Mat<T>> ParameterStore<T>::matrix(int i) {
  auto& e = entries_[i];
  const Eigen::Index rows = e.shape.front();
  return {e.values.data(), rows, Eigen::Index(e.values.size()) / rows};
}

template <typename T>
Eigen::Map<const Mat<T>> ParameterStore<T>::matrix(int i) const {
  const auto& e = entries_[i];
  const Eigen::Index rows = e.shape.front();
  return {e.values.data(), rows, Eigen::Index(e.values.size()) / rows};
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

template <typename T>
ParameterStore<T> ParameterStore<T>::zeros_like() const {
  ParameterStore out;
  for (const auto& e : entries_) out.add(e.name, e.shape);
  return out;
}

template <typename T>
void ParameterStore<T>::zero() {
  for (auto& e : entries_) std::fill(e.values.begin(), e.values.end(), T(0));
}

template <typename T>
bool ParameterStore<T>::all_finite() const {
  for (const auto& e : entries_)
    for (T v : e.values)
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
double ParameterStore<T>::norm(const std::string& prefix) const {
  double acc = 0;
  for (const auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) != 0) continue;
    for (T v : e.values) acc += double(v) * double(v);
  }
  return std::sqrt(acc);
}

template <typename T>
bool ParameterStore<T>::operator==(const ParameterStore& o) const {
  if (size() != o.size()) return false;
  for (int i = 0; i < size(); ++i) {
    const auto &a = entries_[i], &b = o.entries_[i];
    if (a.name != b.name || a.shape != b.shape || a.values != b.values) return false;
  }
  return true;
}

template <typename T>
void kaiming_uniform(std::vector<T>& values, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : values) v = static_cast<T>(dist(rng));
}

template <typename T>
void xavier_uniform(std::vector<T>& values, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : values) v = static_cast<T>(dist(rng));
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void kaiming_uniform<float>(std::vector<float>&, int, std::mt19937_64&);
template void kaiming_uniform<double>(std::vector<double>&, int, std::mt19937_64&);
template void xavier_uniform<float>(std::vector<float>&, int, int, std::mt19937_64&);
template void xavier_uniform<double>(std::vector<double>&, int, int, std::mt19937_64&);

}  // namespace svnerf::nn
