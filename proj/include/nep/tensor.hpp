#pragma once
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nep/error.hpp"
#include "nep/rng.hpp"

namespace nep {

// Dense row-major tensor. Rank-1 and rank-2 are the common cases; row() views
// the last dimension.
template <class T>
struct BasicTensor {
  std::vector<std::size_t> dims;
  std::vector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> d, T fill = T(0))
      : dims(std::move(d)), data(element_count(dims), fill) {}

  static std::size_t element_count(const std::vector<std::size_t>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }
  std::size_t cols() const { return dims.empty() ? 0 : dims.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data.size() / cols(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  std::span<T> row(std::size_t i) { return {data.data() + i * cols(), cols()}; }
  std::span<const T> row(std::size_t i) const { return {data.data() + i * cols(), cols()}; }
  T& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  void fill_normal(Rng& rng, double stddev) {
    for (auto& v : data) v = T(rng.normal() * stddev);
  }

  bool same_shape(const BasicTensor& o) const { return dims == o.dims; }
};

using Tensor = BasicTensor<float>;

inline std::string shape_string(const std::vector<std::size_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s + "]";
}

}  // namespace nep
