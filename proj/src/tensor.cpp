#include "ssam/tensor.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace ssam {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item(): tensor is not a scalar " + shape_string(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (impl_->grad.empty()) return Tensor(impl_->shape);
  return Tensor(impl_->shape, impl_->grad);
}

template <typename T>
void backward(Graph<T>& graph, const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar");
  }
  // A loss that never touched a trainable tensor leaves every gradient at zero.
  if (!loss.requires_grad()) return;
  auto& seed = loss.impl()->grad;
  seed.assign(1, T(1));
  const auto& nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (!it->output->grad.empty()) it->backward();
  }
}

template <typename T>
void dump_tensor(const Tensor<T>& tensor, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("dump_tensor: cannot open " + path);
  out << "shape:";
  for (std::size_t d : tensor.shape()) out << ' ' << d;
  out << '\n' << std::setprecision(std::numeric_limits<T>::max_digits10);
  const auto values = tensor.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << values[i] << (i + 1 == values.size() ? '\n' : ' ');
  }
}

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(Graph<float>&, const Tensor<float>&);
template void backward<double>(Graph<double>&, const Tensor<double>&);
template void dump_tensor<float>(const Tensor<float>&, const std::string&);
template void dump_tensor<double>(const Tensor<double>&, const std::string&);

}  // namespace ssam
