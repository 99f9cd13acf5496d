#pragma once

#include <memory>
#include <string>

#include "ssam/tensor.hpp"

namespace ssam::ops::detail {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

/// Runs f(grad_ptr) only when the tensor behind impl wants a gradient.
template <typename T, typename F>
void accumulate(const ImplPtr<T>& impl, F&& f) {
  if (impl && impl->requires_grad) f(impl->grad_buffer());
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (!a.defined() || a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         (a.defined() ? shape_string(a.shape()) : std::string("undefined")));
  }
}

}  // namespace ssam::ops::detail

#define SSAM_INSTANTIATE_BOTH(MACRO) \
  MACRO(float)                       \
  MACRO(double)
