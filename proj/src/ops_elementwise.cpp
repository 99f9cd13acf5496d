#include <cmath>
#include <numbers>

#include "ops_detail.hpp"
#include "ssam/ops.hpp"

namespace ssam::ops {

using detail::accumulate;
using detail::ImplPtr;

namespace {

/// Shared driver for unary maps y = f(x) with dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, const char* name, F f, DF df) {
  Tensor<T> out(a.shape());
  const T* x = a.data().data();
  T* y = out.mutable_data().data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
  ssam::detail::check_finite(out, name);
  if (auto* g = ssam::detail::recorder<T>({&a})) {
    ImplPtr<T> ai = a.impl(), oi = out.impl();
    ssam::detail::record(g, name, {ai}, out, [ai, oi, df] {
      accumulate(ai, [&](T* ga) {
        const T* go = oi->grad.data();
        const T* x = ai->data.data();
        const T* y = oi->data.data();
        for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += go[i] * df(x[i], y[i]);
      });
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const T* x = a.data().data();
  const T* z = b.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = x[i] + z[i];
  ssam::detail::check_finite(out, "add");
  if (auto* g = ssam::detail::recorder<T>({&a, &b})) {
    ImplPtr<T> ai = a.impl(), bi = b.impl(), oi = out.impl();
    ssam::detail::record(g, "add", {ai, bi}, out, [ai, bi, oi] {
      const T* go = oi->grad.data();
      const std::size_t n = oi->data.size();
      accumulate(ai, [&](T* ga) { for (std::size_t i = 0; i < n; ++i) ga[i] += go[i]; });
      accumulate(bi, [&](T* gb) { for (std::size_t i = 0; i < n; ++i) gb[i] += go[i]; });
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const T* x = a.data().data();
  const T* z = b.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = x[i] - z[i];
  ssam::detail::check_finite(out, "sub");
  if (auto* g = ssam::detail::recorder<T>({&a, &b})) {
    ImplPtr<T> ai = a.impl(), bi = b.impl(), oi = out.impl();
    ssam::detail::record(g, "sub", {ai, bi}, out, [ai, bi, oi] {
      const T* go = oi->grad.data();
      const std::size_t n = oi->data.size();
      accumulate(ai, [&](T* ga) { for (std::size_t i = 0; i < n; ++i) ga[i] += go[i]; });
      accumulate(bi, [&](T* gb) { for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i]; });
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const T* x = a.data().data();
  const T* z = b.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = x[i] * z[i];
  ssam::detail::check_finite(out, "mul");
  if (auto* g = ssam::detail::recorder<T>({&a, &b})) {
    ImplPtr<T> ai = a.impl(), bi = b.impl(), oi = out.impl();
    ssam::detail::record(g, "mul", {ai, bi}, out, [ai, bi, oi] {
      const T* go = oi->grad.data();
      const std::size_t n = oi->data.size();
      accumulate(ai, [&](T* ga) {
        const T* z = bi->data.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * z[i];
      });
      accumulate(bi, [&](T* gb) {
        const T* x = ai->data.data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * x[i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(a, "scale", [factor](T x) { return x * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary<T>(a, "add_scalar", [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(a, "relu", [](T x) { return x > T(0) ? x : T(0); },
                  [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T c = T(0.044715);
  return unary<T>(
      a, "gelu",
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x))); },
      [](T x, T) {
        const T u = k * (x + c * x * x * x);
        const T t = std::tanh(u);
        const T du = k * (T(1) + T(3) * c * x * x);
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
      });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sqrt_eps(const Tensor<T>& a, T eps) {
  if (!(eps > T(0))) throw ConfigError("sqrt_eps: eps must be positive");
  return unary<T>(a, "sqrt_eps", [eps](T x) { return std::sqrt(x + eps); },
                  [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  ssam::detail::check_finite(out, "sum");
  if (auto* g = ssam::detail::recorder<T>({&a})) {
    ImplPtr<T> ai = a.impl(), oi = out.impl();
    ssam::detail::record(g, "sum", {ai}, out, [ai, oi] {
      accumulate(ai, [&](T* ga) {
        const T go = oi->grad[0];
        for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += go;
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::require_rank(a, 2, "mean_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (rows == 0) throw DimensionError("mean_rows: no rows");
  Tensor<T> out(Shape{cols});
  T* y = out.mutable_data().data();
  const T* x = a.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[c] += x[r * cols + c];
  for (std::size_t c = 0; c < cols; ++c) y[c] /= static_cast<T>(rows);
  ssam::detail::check_finite(out, "mean_rows");
  if (auto* g = ssam::detail::recorder<T>({&a})) {
    ImplPtr<T> ai = a.impl(), oi = out.impl();
    ssam::detail::record(g, "mean_rows", {ai}, out, [ai, oi, rows, cols] {
      accumulate(ai, [&](T* ga) {
        const T inv = T(1) / static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += oi->grad[c] * inv;
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (auto* g = ssam::detail::recorder<T>({&a})) {
    ImplPtr<T> ai = a.impl(), oi = out.impl();
    ssam::detail::record(g, "reshape", {ai}, out, [ai, oi] {
      accumulate(ai, [&](T* ga) {
        for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += oi->grad[i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose12(const Tensor<T>& a) {
  detail::require_rank(a, 3, "transpose12");
  const std::size_t A = a.dim(0), B = a.dim(1), C = a.dim(2);
  Tensor<T> out(Shape{A, C, B});
  const T* x = a.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j)
      for (std::size_t k = 0; k < C; ++k) y[(i * C + k) * B + j] = x[(i * B + j) * C + k];
  if (auto* g = ssam::detail::recorder<T>({&a})) {
    ImplPtr<T> ai = a.impl(), oi = out.impl();
    ssam::detail::record(g, "transpose12", {ai}, out, [ai, oi, A, B, C] {
      accumulate(ai, [&](T* ga) {
        const T* go = oi->grad.data();
        for (std::size_t i = 0; i < A; ++i)
          for (std::size_t j = 0; j < B; ++j)
            for (std::size_t k = 0; k < C; ++k) ga[(i * B + j) * C + k] += go[(i * C + k) * B + j];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_rank(a, 4, "slice_channels");
  const std::size_t N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  if (begin + count > C || count == 0) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + std::to_string(C) + " channels");
  }
  Tensor<T> out(Shape{N, count, a.dim(2), a.dim(3)});
  const T* x = a.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t i = 0; i < HW; ++i) y[(n * count + c) * HW + i] = x[(n * C + begin + c) * HW + i];
  if (auto* g = ssam::detail::recorder<T>({&a})) {
    ImplPtr<T> ai = a.impl(), oi = out.impl();
    ssam::detail::record(g, "slice_channels", {ai}, out, [ai, oi, N, C, HW, begin, count] {
      accumulate(ai, [&](T* ga) {
        const T* go = oi->grad.data();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < count; ++c)
            for (std::size_t i = 0; i < HW; ++i) ga[(n * C + begin + c) * HW + i] += go[(n * count + c) * HW + i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  detail::require_rank(image, 4, "patchify");
  const std::size_t N = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw DimensionError("patchify: image " + shape_string(image.shape()) + " not divisible by patch " +
                         std::to_string(patch));
  }
  const std::size_t gh = H / patch, gw = W / patch, L = gh * gw, D = C * patch * patch;
  Tensor<T> out(Shape{N, L, D});
  const T* x = image.data().data();
  T* y = out.mutable_data().data();
  // Index map from output slot to source pixel, shared by forward and backward.
  auto source = [=](std::size_t n, std::size_t l, std::size_t d) {
    const std::size_t py = l / gw, px = l % gw;
    const std::size_t c = d / (patch * patch), r = (d / patch) % patch, s = d % patch;
    return ((n * C + c) * H + py * patch + r) * W + px * patch + s;
  };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < D; ++d) y[(n * L + l) * D + d] = x[source(n, l, d)];
  if (auto* g = ssam::detail::recorder<T>({&image})) {
    ImplPtr<T> ai = image.impl(), oi = out.impl();
    ssam::detail::record(g, "patchify", {ai}, out, [ai, oi, N, L, D, source] {
      accumulate(ai, [&](T* ga) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t l = 0; l < L; ++l)
            for (std::size_t d = 0; d < D; ++d) ga[source(n, l, d)] += oi->grad[(n * L + l) * D + d];
      });
    });
  }
  return out;
}

#define SSAM_ELEMENTWISE(T)                                                        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                                    \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                 \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                    \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                    \
  template Tensor<T> square<T>(const Tensor<T>&);                                  \
  template Tensor<T> sqrt_eps<T>(const Tensor<T>&, T);                             \
  template Tensor<T> sum<T>(const Tensor<T>&);                                     \
  template Tensor<T> mean<T>(const Tensor<T>&);                                    \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                               \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                          \
  template Tensor<T> transpose12<T>(const Tensor<T>&);                             \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> patchify<T>(const Tensor<T>&, std::size_t);

SSAM_INSTANTIATE_BOTH(SSAM_ELEMENTWISE)

}  // namespace ssam::ops
