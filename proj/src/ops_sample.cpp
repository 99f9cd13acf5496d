#include <cmath>
#include <vector>

#include "ops_detail.hpp"
#include "ssam/ops.hpp"

namespace ssam::ops {

using detail::accumulate;
using detail::ImplPtr;

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const Tensor<T>& coords) {
  detail::require_rank(input, 4, "bilinear_sample");
  detail::require_rank(coords, 3, "bilinear_sample(coords)");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (coords.dim(0) != N || coords.dim(2) != 2) {
    throw DimensionError("bilinear_sample: coords " + shape_string(coords.shape()) + " do not match input " +
                         shape_string(input.shape()));
  }
  const std::size_t P = coords.dim(1);
  for (T v : coords.data()) {
    if (!std::isfinite(v)) throw NumericError("bilinear_sample: non-finite coordinate");
  }
  Tensor<T> out(Shape{N, C, P});
  const T* x = input.data().data();
  const T* pc = coords.data().data();
  T* y = out.mutable_data().data();
  const auto Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const T cy = pc[(n * P + p) * 2], cx = pc[(n * P + p) * 2 + 1];
      const T fy0 = std::floor(cy), fx0 = std::floor(cx);
      const auto y0 = static_cast<std::ptrdiff_t>(fy0), x0 = static_cast<std::ptrdiff_t>(fx0);
      const T ty = cy - fy0, tx = cx - fx0;
      const T wts[4] = {(T(1) - ty) * (T(1) - tx), (T(1) - ty) * tx, ty * (T(1) - tx), ty * tx};
      const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
      for (int k = 0; k < 4; ++k) {
        if (ys[k] < 0 || ys[k] >= Hs || xs[k] < 0 || xs[k] >= Ws) continue;
        const std::size_t off = static_cast<std::size_t>(ys[k]) * W + static_cast<std::size_t>(xs[k]);
        for (std::size_t c = 0; c < C; ++c) y[(n * C + c) * P + p] += wts[k] * x[(n * C + c) * H * W + off];
      }
    }
  }
  ssam::detail::check_finite(out, "bilinear_sample");
  if (auto* g = ssam::detail::recorder<T>({&input, &coords})) {
    ImplPtr<T> xi = input.impl(), ci = coords.impl(), oi = out.impl();
    ssam::detail::record(g, "bilinear_sample", {xi, ci}, out, [=] {
      const bool want_x = xi->requires_grad, want_c = ci->requires_grad;
      T* gx = want_x ? xi->grad_buffer() : nullptr;
      T* gc = want_c ? ci->grad_buffer() : nullptr;
      const T* go = oi->grad.data();
      const T* x = xi->data.data();
      const T* pc = ci->data.data();
      auto pixel = [&](std::size_t plane, std::ptrdiff_t yy, std::ptrdiff_t xx) -> T {
        if (yy < 0 || yy >= Hs || xx < 0 || xx >= Ws) return T(0);
        return x[plane * H * W + static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
      };
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t p = 0; p < P; ++p) {
          const T cy = pc[(n * P + p) * 2], cx = pc[(n * P + p) * 2 + 1];
          const T fy0 = std::floor(cy), fx0 = std::floor(cx);
          const auto y0 = static_cast<std::ptrdiff_t>(fy0), x0 = static_cast<std::ptrdiff_t>(fx0);
          const T ty = cy - fy0, tx = cx - fx0;
          const T wts[4] = {(T(1) - ty) * (T(1) - tx), (T(1) - ty) * tx, ty * (T(1) - tx), ty * tx};
          const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
          const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
          T dy = 0, dx = 0;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t plane = n * C + c;
            const T gval = go[plane * P + p];
            if (gval == T(0)) continue;
            if (want_x) {
              for (int k = 0; k < 4; ++k) {
                if (ys[k] < 0 || ys[k] >= Hs || xs[k] < 0 || xs[k] >= Ws) continue;
                gx[plane * H * W + static_cast<std::size_t>(ys[k]) * W + static_cast<std::size_t>(xs[k])] +=
                    wts[k] * gval;
              }
            }
            if (want_c) {
              const T v00 = pixel(plane, y0, x0), v01 = pixel(plane, y0, x0 + 1);
              const T v10 = pixel(plane, y0 + 1, x0), v11 = pixel(plane, y0 + 1, x0 + 1);
              dy += gval * ((T(1) - tx) * (v10 - v00) + tx * (v11 - v01));
              dx += gval * ((T(1) - ty) * (v01 - v00) + ty * (v11 - v10));
            }
          }
          if (want_c) {
            gc[(n * P + p) * 2] += dy;
            gc[(n * P + p) * 2 + 1] += dx;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> offsets_to_coords(const Tensor<T>& offsets, std::size_t kernel) {
  detail::require_rank(offsets, 4, "offsets_to_coords");
  const std::size_t K = kernel * kernel;
  const std::size_t N = offsets.dim(0), H = offsets.dim(2), W = offsets.dim(3);
  if (kernel % 2 == 0 || offsets.dim(1) != 2 * K) {
    throw DimensionError("offsets_to_coords: expected " + std::to_string(2 * K) + " offset channels, got " +
                         shape_string(offsets.shape()));
  }
  const std::size_t HW = H * W, P = K * HW;
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  Tensor<T> out(Shape{N, P, 2});
  const T* o = offsets.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < K; ++t) {
      const T a = static_cast<T>(static_cast<std::ptrdiff_t>(t / kernel) - half);
      const T b = static_cast<T>(static_cast<std::ptrdiff_t>(t % kernel) - half);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t p = t * HW + i * W + j;
          y[(n * P + p) * 2] = static_cast<T>(i) + a + o[((n * 2 * K) + 2 * t) * HW + i * W + j];
          y[(n * P + p) * 2 + 1] = static_cast<T>(j) + b + o[((n * 2 * K) + 2 * t + 1) * HW + i * W + j];
        }
    }
  ssam::detail::check_finite(out, "offsets_to_coords");
  if (auto* g = ssam::detail::recorder<T>({&offsets})) {
    ImplPtr<T> oi_in = offsets.impl(), oi = out.impl();
    ssam::detail::record(g, "offsets_to_coords", {oi_in}, out, [=] {
      accumulate(oi_in, [&](T* go_in) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t t = 0; t < K; ++t)
            for (std::size_t q = 0; q < HW; ++q) {
              const std::size_t p = t * HW + q;
              go_in[((n * 2 * K) + 2 * t) * HW + q] += oi->grad[(n * P + p) * 2];
              go_in[((n * 2 * K) + 2 * t + 1) * HW + q] += oi->grad[(n * P + p) * 2 + 1];
            }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> tap_sum(const Tensor<T>& samples, const Tensor<T>& weights) {
  detail::require_rank(samples, 4, "tap_sum");
  detail::require_rank(weights, 2, "tap_sum(weights)");
  const std::size_t N = samples.dim(0), C = samples.dim(1), K = samples.dim(2), P = samples.dim(3);
  if (weights.dim(0) != C || weights.dim(1) != K) {
    throw DimensionError("tap_sum: weights " + shape_string(weights.shape()) + " do not match samples " +
                         shape_string(samples.shape()));
  }
  Tensor<T> out(Shape{N, C, P});
  const T* s = samples.data().data();
  const T* w = weights.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = w[c * K + k];
        const T* src = s + ((n * C + c) * K + k) * P;
        T* dst = y + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] += wk * src[p];
      }
  ssam::detail::check_finite(out, "tap_sum");
  if (auto* g = ssam::detail::recorder<T>({&samples, &weights})) {
    ImplPtr<T> si = samples.impl(), wi = weights.impl(), oi = out.impl();
    ssam::detail::record(g, "tap_sum", {si, wi}, out, [=] {
      const T* go = oi->grad.data();
      accumulate(si, [&](T* gs) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < K; ++k) {
              const T wk = wi->data[c * K + k];
              for (std::size_t p = 0; p < P; ++p) gs[((n * C + c) * K + k) * P + p] += wk * go[(n * C + c) * P + p];
            }
      });
      accumulate(wi, [&](T* gw) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < K; ++k) {
              T acc = 0;
              const T* src = si->data.data() + ((n * C + c) * K + k) * P;
              for (std::size_t p = 0; p < P; ++p) acc += src[p] * go[(n * C + c) * P + p];
              gw[c * K + k] += acc;
            }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> diffusion_step(const Tensor<T>& x, const Tensor<T>& conductance, T dt) {
  detail::require_rank(x, 4, "diffusion_step");
  detail::require_same_shape(x, conductance, "diffusion_step");
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(x.shape());
  const T* u = x.data().data();
  const T* c = conductance.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* up = u + p * H * W;
    const T* cp = c + p * H * W;
    T* yp = y + p * H * W;
    for (std::size_t i = 0; i < H * W; ++i) yp[i] = up[i];
    // Each interior edge moves dt * flux from one pixel to its neighbour.
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j + 1 < W; ++j) {
        const std::size_t a = i * W + j, b = a + 1;
        const T f = dt * T(0.5) * (cp[a] + cp[b]) * (up[b] - up[a]);
        yp[a] += f;
        yp[b] -= f;
      }
    for (std::size_t i = 0; i + 1 < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t a = i * W + j, b = a + W;
        const T f = dt * T(0.5) * (cp[a] + cp[b]) * (up[b] - up[a]);
        yp[a] += f;
        yp[b] -= f;
      }
  }
  ssam::detail::check_finite(out, "diffusion_step");
  if (auto* g = ssam::detail::recorder<T>({&x, &conductance})) {
    ImplPtr<T> xi = x.impl(), ci = conductance.impl(), oi = out.impl();
    ssam::detail::record(g, "diffusion_step", {xi, ci}, out, [=] {
      const bool want_x = xi->requires_grad, want_c = ci->requires_grad;
      T* gx = want_x ? xi->grad_buffer() : nullptr;
      T* gc = want_c ? ci->grad_buffer() : nullptr;
      const T* go = oi->grad.data();
      for (std::size_t p = 0; p < planes; ++p) {
        const T* up = xi->data.data() + p * H * W;
        const T* cp = ci->data.data() + p * H * W;
        const T* gp = go + p * H * W;
        T* gxp = want_x ? gx + p * H * W : nullptr;
        T* gcp = want_c ? gc + p * H * W : nullptr;
        if (want_x)
          for (std::size_t i = 0; i < H * W; ++i) gxp[i] += gp[i];
        auto edge = [&](std::size_t a, std::size_t b) {
          const T gf = dt * (gp[a] - gp[b]);
          const T h = T(0.5) * (cp[a] + cp[b]);
          if (want_x) {
            gxp[b] += gf * h;
            gxp[a] -= gf * h;
          }
          if (want_c) {
            const T d = T(0.5) * gf * (up[b] - up[a]);
            gcp[a] += d;
            gcp[b] += d;
          }
        };
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j + 1 < W; ++j) edge(i * W + j, i * W + j + 1);
        for (std::size_t i = 0; i + 1 < H; ++i)
          for (std::size_t j = 0; j < W; ++j) edge(i * W + j, i * W + j + W);
      }
    });
  }
  return out;
}

#define SSAM_SAMPLE(T)                                                          \
  template Tensor<T> bilinear_sample<T>(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> offsets_to_coords<T>(const Tensor<T>&, std::size_t);       \
  template Tensor<T> tap_sum<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> diffusion_step<T>(const Tensor<T>&, const Tensor<T>&, T);

SSAM_INSTANTIATE_BOTH(SSAM_SAMPLE)

}  // namespace ssam::ops
