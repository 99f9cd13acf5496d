#include <algorithm>
#include <cmath>
#include <vector>

#include "ops_detail.hpp"
#include "ssam/ops.hpp"

namespace ssam::ops {

using detail::accumulate;
using detail::ImplPtr;

namespace {

// Row-major axpy-style loops.

/// c (M, N) += a (M, K) * b (K, N)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t m = 0; m < M; ++m) {
    T* crow = c + m * N;
    const T* arow = a + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T s = arow[k];
      const T* brow = b + k * N;
      for (std::size_t n = 0; n < N; ++n) crow[n] += s * brow[n];
    }
  }
}

/// c (K, N) += a^T b with a (M, K), b (M, N)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* arow = a + m * K;
    const T* brow = b + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T s = arow[k];
      T* crow = c + k * N;
      for (std::size_t n = 0; n < N; ++n) crow[n] += s * brow[n];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(weight, 2, "linear(weight)");
  const std::size_t M = x.dim(0), K = x.dim(1), N = weight.dim(0);
  if (weight.dim(1) != K) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != N)) {
    throw DimensionError("linear: bias shape " + shape_string(bias.shape()));
  }
  Tensor<T> out(Shape{M, N});
  T* y = out.mutable_data().data();
  if (bias.defined()) {
    for (std::size_t m = 0; m < M; ++m) std::copy(bias.data().begin(), bias.data().end(), y + m * N);
  }
  const std::vector<T> wt = transposed(weight.data().data(), N, K);
  gemm_nn(x.data().data(), wt.data(), y, M, K, N);
  ssam::detail::check_finite(out, "linear");
  if (auto* g = ssam::detail::recorder<T>({&x, &weight, &bias})) {
    ImplPtr<T> xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl();
    ssam::detail::record(g, "linear", {xi, wi, bi}, out, [xi, wi, bi, oi, M, K, N] {
      const T* go = oi->grad.data();
      accumulate(xi, [&](T* gx) { gemm_nn(go, wi->data.data(), gx, M, N, K); });
      accumulate(wi, [&](T* gw) { gemm_tn(go, xi->data.data(), gw, M, N, K); });
      accumulate(bi, [&](T* gb) {
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t n = 0; n < N; ++n) gb[n] += go[m * N + n];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t M = x.dim(0), C = x.dim(1);
  if (gamma.numel() != C || beta.numel() != C) throw DimensionError("layer_norm: affine size mismatch");
  Tensor<T> out(Shape{M, C});
  std::vector<T> xhat(M * C), inv_std(M);
  const T* xs = x.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t m = 0; m < M; ++m) {
    const T* row = xs + m * C;
    T mu = 0;
    for (std::size_t c = 0; c < C; ++c) mu += row[c];
    mu /= static_cast<T>(C);
    T var = 0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(C);
    inv_std[m] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[m * C + c] = (row[c] - mu) * inv_std[m];
      y[m * C + c] = xhat[m * C + c] * gamma[c] + beta[c];
    }
  }
  ssam::detail::check_finite(out, "layer_norm");
  if (auto* g = ssam::detail::recorder<T>({&x, &gamma, &beta})) {
    ImplPtr<T> xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    ssam::detail::record(g, "layer_norm", {xi, gi, bi}, out,
                         [xi, gi, bi, oi, M, C, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const T* go = oi->grad.data();
      accumulate(gi, [&](T* gg) {
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t c = 0; c < C; ++c) gg[c] += go[m * C + c] * xhat[m * C + c];
      });
      accumulate(bi, [&](T* gb) {
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t c = 0; c < C; ++c) gb[c] += go[m * C + c];
      });
      accumulate(xi, [&](T* gx) {
        const T* gam = gi->data.data();
        for (std::size_t m = 0; m < M; ++m) {
          T mean_g = 0, mean_gx = 0;
          for (std::size_t c = 0; c < C; ++c) {
            const T gh = go[m * C + c] * gam[c];
            mean_g += gh;
            mean_gx += gh * xhat[m * C + c];
          }
          mean_g /= static_cast<T>(C);
          mean_gx /= static_cast<T>(C);
          for (std::size_t c = 0; c < C; ++c) {
            const T gh = go[m * C + c] * gam[c];
            gx[m * C + c] += inv_std[m] * (gh - mean_g - xhat[m * C + c] * mean_gx);
          }
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_stable(const Tensor<T>& logits, std::size_t axis) {
  if (!logits.defined() || axis >= logits.rank()) throw DimensionError("softmax_stable: bad axis");
  const Shape& shape = logits.shape();
  const std::size_t len = shape[axis];
  if (len == 0) throw DimensionError("softmax_stable: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  Tensor<T> out(shape);
  const T* x = logits.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(x[base + k * inner] - mx);
        y[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= total;
    }
  }
  ssam::detail::check_finite(out, "softmax_stable");
  if (auto* g = ssam::detail::recorder<T>({&logits})) {
    ImplPtr<T> xi = logits.impl(), oi = out.impl();
    ssam::detail::record(g, "softmax_stable", {xi}, out, [xi, oi, outer, inner, len] {
      accumulate(xi, [&](T* gx) {
        const T* go = oi->grad.data();
        const T* y = oi->data.data();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = 0;
            for (std::size_t k = 0; k < len; ++k) dot += go[base + k * inner] * y[base + k * inner];
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t i = base + k * inner;
              gx[i] += y[i] * (go[i] - dot);
            }
          }
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
  detail::require_rank(q, 3, "attention");
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  const std::size_t N = q.dim(0), L = q.dim(1), C = q.dim(2);
  if (heads == 0 || C % heads != 0) throw ConfigError("attention: heads must divide channels");
  const std::size_t D = C / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(D));

  // Per (n, h): gather contiguous Q, K^T, V blocks, then the probabilities.
  std::vector<T> probs(N * heads * L * L);
  Tensor<T> out(Shape{N, L, C});
  T* y = out.mutable_data().data();
  std::vector<T> qh(L * D), kt(D * L), vh(L * D), oh(L * D);
  auto gather = [&](const T* src, std::size_t n, std::size_t h, T* dst) {
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < D; ++d) dst[l * D + d] = src[(n * L + l) * C + h * D + d];
  };
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t h = 0; h < heads; ++h) {
      gather(q.data().data(), n, h, qh.data());
      gather(v.data().data(), n, h, vh.data());
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t d = 0; d < D; ++d) kt[d * L + l] = k.data()[(n * L + l) * C + h * D + d];
      T* P = probs.data() + (n * heads + h) * L * L;
      std::fill(P, P + L * L, T(0));
      gemm_nn(qh.data(), kt.data(), P, L, D, L);
      for (std::size_t i = 0; i < L; ++i) {
        T* row = P + i * L;
        T mx = row[0] * scale_factor;
        for (std::size_t j = 0; j < L; ++j) {
          row[j] *= scale_factor;
          mx = std::max(mx, row[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < L; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j < L; ++j) row[j] /= total;
      }
      std::fill(oh.begin(), oh.end(), T(0));
      gemm_nn(P, vh.data(), oh.data(), L, L, D);
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t d = 0; d < D; ++d) y[(n * L + l) * C + h * D + d] = oh[l * D + d];
    }
  }
  ssam::detail::check_finite(out, "attention");
  if (auto* g = ssam::detail::recorder<T>({&q, &k, &v})) {
    ImplPtr<T> qi = q.impl(), ki = k.impl(), vi = v.impl(), oi = out.impl();
    ssam::detail::record(g, "attention", {qi, ki, vi}, out,
                         [qi, ki, vi, oi, N, L, C, D, heads, scale_factor, probs = std::move(probs)] {
      const bool want_q = qi->requires_grad, want_k = ki->requires_grad, want_v = vi->requires_grad;
      T* gq = want_q ? qi->grad_buffer() : nullptr;
      T* gk = want_k ? ki->grad_buffer() : nullptr;
      T* gv = want_v ? vi->grad_buffer() : nullptr;
      std::vector<T> go_h(L * D), vt(D * L), dP(L * L), qh(L * D), kh(L * D), tmp(L * D);
      const T* go = oi->grad.data();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t h = 0; h < heads; ++h) {
          const T* P = probs.data() + (n * heads + h) * L * L;
          for (std::size_t l = 0; l < L; ++l)
            for (std::size_t d = 0; d < D; ++d) {
              const std::size_t idx = (n * L + l) * C + h * D + d;
              go_h[l * D + d] = go[idx];
              vt[d * L + l] = vi->data[idx];
              qh[l * D + d] = qi->data[idx];
              kh[l * D + d] = ki->data[idx];
            }
          if (want_v) {
            // dV = P^T dO
            std::fill(tmp.begin(), tmp.end(), T(0));
            gemm_tn(P, go_h.data(), tmp.data(), L, L, D);
            for (std::size_t l = 0; l < L; ++l)
              for (std::size_t d = 0; d < D; ++d) gv[(n * L + l) * C + h * D + d] += tmp[l * D + d];
          }
          if (!want_q && !want_k) continue;
          // dP = dO V^T, then dS = P * (dP - rowsum(dP * P)) * scale.
          std::fill(dP.begin(), dP.end(), T(0));
          gemm_nn(go_h.data(), vt.data(), dP.data(), L, D, L);
          for (std::size_t i = 0; i < L; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < L; ++j) dot += dP[i * L + j] * P[i * L + j];
            for (std::size_t j = 0; j < L; ++j) dP[i * L + j] = P[i * L + j] * (dP[i * L + j] - dot) * scale_factor;
          }
          if (want_q) {
            std::fill(tmp.begin(), tmp.end(), T(0));
            gemm_nn(dP.data(), kh.data(), tmp.data(), L, L, D);
            for (std::size_t l = 0; l < L; ++l)
              for (std::size_t d = 0; d < D; ++d) gq[(n * L + l) * C + h * D + d] += tmp[l * D + d];
          }
          if (want_k) {
            std::fill(tmp.begin(), tmp.end(), T(0));
            gemm_tn(dP.data(), qh.data(), tmp.data(), L, L, D);
            for (std::size_t l = 0; l < L; ++l)
              for (std::size_t d = 0; d < D; ++d) gk[(n * L + l) * C + h * D + d] += tmp[l * D + d];
          }
        }
      }
    });
  }
  return out;
}

#define SSAM_DENSE(T)                                                                             \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> softmax_stable<T>(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);

SSAM_INSTANTIATE_BOTH(SSAM_DENSE)

}  // namespace ssam::ops
