#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssam {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or rank mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or structural configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A primitive produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  /// Returns the gradient buffer, allocating it zero-filled on first use.
  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

/// Dense row-major array with an optional gradient slot.
///
/// A Tensor is a cheap handle; copies share storage. Values produced by a
/// primitive are never modified afterwards, only leaf tensors (parameters,
/// inputs) are written through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return {impl_->grad_buffer(), impl_->data.size()}; }
  void zero_grad() { impl_->grad.clear(); }

  /// Copy of the values with no gradient history.
  Tensor detach() const;
  /// Gradient as a standalone tensor (zeros when no gradient was written).
  Tensor grad_tensor() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Tape of primitive applications, recorded in execution order.
///
/// Primitives append a node only while a Recording scope is active and at
/// least one input requires a gradient. Creation order is a valid
/// topological order, so backward() is a single reverse sweep.
template <typename T>
class Graph {
 public:
  using ImplPtr = std::shared_ptr<TensorImpl<T>>;

  struct Node {
    const char* op;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    std::function<void()> backward;
  };

  class Recording {
   public:
    explicit Recording(Graph* graph) : previous_(active_) { active_ = graph; }
    ~Recording() { active_ = previous_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Graph* previous_;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  [[nodiscard]] Recording record() { return Recording(this); }

  static Graph* active() { return active_; }

  void push(Node node) { nodes_.push_back(std::move(node)); }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
  static inline thread_local Graph* active_ = nullptr;
};

/// Suspends recording for the current scope (inference mode).
template <typename T>
class NoGrad {
 public:
  NoGrad() : recording_(nullptr) {}

 private:
  typename Graph<T>::Recording recording_;
};

/// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
/// into every tensor flagged requires_grad.
template <typename T>
void backward(Graph<T>& graph, const Tensor<T>& loss);

/// Writes "shape: d0 d1 ..." then the values in row-major order.
template <typename T>
void dump_tensor(const Tensor<T>& tensor, const std::string& path);

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op);

/// Returns the graph that should record this op, or nullptr.
template <typename T>
Graph<T>* recorder(std::initializer_list<const Tensor<T>*> inputs) {
  Graph<T>* graph = Graph<T>::active();
  if (graph == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return graph;
  }
  return nullptr;
}

template <typename T>
void record(Graph<T>* graph, const char* op, std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
            Tensor<T>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  graph->push({op, std::move(inputs), out.impl(), std::move(fn)});
}

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ssam
