#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ssam/tensor.hpp"

namespace ssam {

using Rng = std::mt19937_64;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered parameter registry. Order is the checkpoint block order.
template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

/// Trainable tensor drawn from N(0, stddev^2).
template <typename T>
Tensor<T> normal_param(Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  Tensor<T> t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

/// He-style scale for a layer with the given fan-in.
inline double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

/// Order-sensitive FNV-1a digest over the raw bytes of every tensor.
template <typename T>
std::uint64_t checksum(const ParamList<T>& params);

template <typename T>
std::uint64_t checksum(const Tensor<T>& tensor);

template <typename T>
std::size_t count_parameters(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    t.zero_grad();
  }
}

/// Converts a parameter list into another precision (values copied).
template <typename To, typename From>
ParamList<To> convert_params(const ParamList<From>& params) {
  ParamList<To> out;
  for (const auto& p : params) {
    std::vector<To> values(p.tensor.data().begin(), p.tensor.data().end());
    Tensor<To> t(p.tensor.shape(), std::move(values));
    t.set_requires_grad(p.tensor.requires_grad());
    out.push_back({p.name, t});
  }
  return out;
}

}  // namespace ssam
