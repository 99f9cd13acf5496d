#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ssam/tensor.hpp"

namespace ssam {

/// Central-difference estimate (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of x. f must be deterministic; a non-finite value aborts with
/// NumericError.
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                                     T h = T(1e-5));

/// Same estimate for a leaf tensor that f reads through a captured handle;
/// the tensor is perturbed in place and restored afterwards.
template <typename T>
Tensor<T> finite_difference_gradient_inplace(const std::function<T()>& f, Tensor<T>& param, T h = T(1e-5));

struct GradientComparison {
  double worst_rel_err = 0.0;
  double worst_abs_err = 0.0;
  bool pass = true;
};

/// Elements whose analytic value is below abs_floor in magnitude are judged
/// on absolute error (<= abs_floor); all others on relative error.
GradientComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                     double rel_tol = 1e-4, double abs_floor = 1e-6);

/// Merges two comparisons, keeping the worst errors.
GradientComparison merge(const GradientComparison& a, const GradientComparison& b);

using OpFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Projects op output onto fixed random weights in [-1, 1], back-propagates,
/// and compares every input gradient against central differences.
GradientComparison check_op_gradients(const OpFn& op, std::vector<Tensor<double>> inputs, std::uint64_t seed = 7,
                                      double h = 1e-5);

}  // namespace ssam
