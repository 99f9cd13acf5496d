#include "ssam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ssam/ops.hpp"

namespace ssam {

namespace {

template <typename T>
T checked(T value) {
  if (!std::isfinite(value)) throw NumericError("finite_difference_gradient: objective is not finite");
  return value;
}

}  // namespace

template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h) {
  Tensor<T> probe = x.detach();
  Tensor<T> grad(x.shape());
  auto values = probe.mutable_data();
  auto out = grad.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + h;
    const T plus = checked(f(probe));
    values[i] = saved - h;
    const T minus = checked(f(probe));
    values[i] = saved;
    out[i] = (plus - minus) / (T(2) * h);
  }
  return grad;
}

template <typename T>
Tensor<T> finite_difference_gradient_inplace(const std::function<T()>& f, Tensor<T>& param, T h) {
  Tensor<T> grad(param.shape());
  auto values = param.mutable_data();
  auto out = grad.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + h;
    const T plus = checked(f());
    values[i] = saved - h;
    const T minus = checked(f());
    values[i] = saved;
    out[i] = (plus - minus) / (T(2) * h);
  }
  return grad;
}

GradientComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                     double rel_tol, double abs_floor) {
  if (analytic.size() != numeric.size()) throw DimensionError("compare_gradients: size mismatch");
  GradientComparison result;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double abs_err = std::abs(a - n);
    result.worst_abs_err = std::max(result.worst_abs_err, abs_err);
    if (std::abs(a) < abs_floor) {
      if (abs_err > abs_floor) result.pass = false;
      continue;
    }
    const double rel = abs_err / std::max(std::abs(a), std::abs(n));
    result.worst_rel_err = std::max(result.worst_rel_err, rel);
    if (rel > rel_tol) result.pass = false;
  }
  return result;
}

GradientComparison merge(const GradientComparison& a, const GradientComparison& b) {
  return {std::max(a.worst_rel_err, b.worst_rel_err), std::max(a.worst_abs_err, b.worst_abs_err),
          a.pass && b.pass};
}

GradientComparison check_op_gradients(const OpFn& op, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                                      double h) {
  for (auto& in : inputs) {
    in = in.detach();
    in.set_requires_grad(true);
  }
  Tensor<double> probe_out;
  {
    NoGrad<double> ng;
    probe_out = op(inputs);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<double> weights(probe_out.shape());
  for (double& v : weights.mutable_data()) v = dist(rng);

  Graph<double> graph;
  {
    auto rec = graph.record();
    backward(graph, ops::sum(ops::mul(op(inputs), weights)));
  }
  auto objective = [&]() {
    NoGrad<double> ng;
    return ops::sum(ops::mul(op(inputs), weights)).item();
  };
  GradientComparison total;
  for (auto& in : inputs) {
    Tensor<double> numeric = finite_difference_gradient_inplace<double>(objective, in, h);
    Tensor<double> analytic = in.grad_tensor();
    total = merge(total, compare_gradients(analytic.data(), numeric.data()));
  }
  return total;
}

template Tensor<float> finite_difference_gradient<float>(const std::function<float(const Tensor<float>&)>&,
                                                         const Tensor<float>&, float);
template Tensor<double> finite_difference_gradient<double>(const std::function<double(const Tensor<double>&)>&,
                                                           const Tensor<double>&, double);
template Tensor<float> finite_difference_gradient_inplace<float>(const std::function<float()>&, Tensor<float>&,
                                                                 float);
template Tensor<double> finite_difference_gradient_inplace<double>(const std::function<double()>&,
                                                                   Tensor<double>&, double);

}  // namespace ssam
