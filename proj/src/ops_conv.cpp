#include <algorithm>
#include <limits>
#include <vector>

#include "ops_detail.hpp"
#include "ssam/ops.hpp"

namespace ssam::ops {

using detail::accumulate;
using detail::ImplPtr;

namespace {

/// Mirror index without repeating the edge sample (x[-1] = x[1]).
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

/// Copies every (n, c) plane into a zero- or mirror-padded buffer.
template <typename T>
std::vector<T> pad_planes(const T* x, std::size_t planes, std::size_t H, std::size_t W, std::size_t ph,
                          std::size_t pw, Padding mode) {
  const std::size_t PH = H + 2 * ph, PW = W + 2 * pw;
  std::vector<T> out(planes * PH * PW, T(0));
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x + p * H * W;
    T* dst = out.data() + p * PH * PW;
    for (std::size_t y = 0; y < PH; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(ph);
      if (mode == Padding::Zero && (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H))) continue;
      const std::size_t ry = static_cast<std::size_t>(reflect_index(sy, static_cast<std::ptrdiff_t>(H)));
      for (std::size_t x2 = 0; x2 < PW; ++x2) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x2) - static_cast<std::ptrdiff_t>(pw);
        if (mode == Padding::Zero && (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W))) continue;
        const std::size_t rx = static_cast<std::size_t>(reflect_index(sx, static_cast<std::ptrdiff_t>(W)));
        dst[y * PW + x2] = src[ry * W + rx];
      }
    }
  }
  return out;
}

/// Adjoint of pad_planes: folds a padded gradient back onto the source planes.
template <typename T>
void unpad_accumulate(const T* padded, T* gx, std::size_t planes, std::size_t H, std::size_t W, std::size_t ph,
                      std::size_t pw, Padding mode) {
  const std::size_t PH = H + 2 * ph, PW = W + 2 * pw;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = padded + p * PH * PW;
    T* dst = gx + p * H * W;
    for (std::size_t y = 0; y < PH; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(ph);
      if (mode == Padding::Zero && (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H))) continue;
      const std::size_t ry = static_cast<std::size_t>(reflect_index(sy, static_cast<std::ptrdiff_t>(H)));
      for (std::size_t x2 = 0; x2 < PW; ++x2) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x2) - static_cast<std::ptrdiff_t>(pw);
        if (mode == Padding::Zero && (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W))) continue;
        const std::size_t rx = static_cast<std::size_t>(reflect_index(sx, static_cast<std::ptrdiff_t>(W)));
        dst[ry * W + rx] += src[y * PW + x2];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t groups,
                 Padding padding) {
  detail::require_rank(input, 4, "conv2d");
  detail::require_rank(kernel, 4, "conv2d(kernel)");
  const std::size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Cout = kernel.dim(0), Cg = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  if (groups == 0 || Cin % groups != 0 || Cout % groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(groups) + " does not divide channels " +
                      std::to_string(Cin) + " -> " + std::to_string(Cout));
  }
  if (Cg != Cin / groups) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " expects " +
                         std::to_string(Cg * groups) + " input channels, got " + std::to_string(Cin));
  }
  if (KH % 2 == 0 || KW % 2 == 0) throw DimensionError("conv2d: kernel extents must be odd");
  if (bias.defined() && bias.numel() != Cout) throw DimensionError("conv2d: bias size mismatch");
  const std::size_t ph = KH / 2, pw = KW / 2;
  if (padding == Padding::Reflect && (H <= ph || W <= pw)) {
    throw DimensionError("conv2d: image " + shape_string(input.shape()) + " too small for reflect padding");
  }
  const std::size_t PH = H + 2 * ph, PW = W + 2 * pw;
  const std::size_t out_per_group = Cout / groups;
  std::vector<T> padded = pad_planes(input.data().data(), N * Cin, H, W, ph, pw, padding);

  Tensor<T> out(Shape{N, Cout, H, W});
  T* y = out.mutable_data().data();
  const T* w = kernel.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Cout; ++co) {
      T* plane = y + (n * Cout + co) * H * W;
      if (bias.defined()) std::fill(plane, plane + H * W, bias[co]);
      const std::size_t group = co / out_per_group;
      for (std::size_t cg = 0; cg < Cg; ++cg) {
        const std::size_t ci = group * Cg + cg;
        const T* src = padded.data() + (n * Cin + ci) * PH * PW;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const T wv = w[((co * Cg + cg) * KH + ky) * KW + kx];
            for (std::size_t yy = 0; yy < H; ++yy) {
              const T* srow = src + (yy + ky) * PW + kx;
              T* orow = plane + yy * W;
              for (std::size_t xx = 0; xx < W; ++xx) orow[xx] += wv * srow[xx];
            }
          }
        }
      }
    }
  }
  ssam::detail::check_finite(out, "conv2d");
  if (auto* g = ssam::detail::recorder<T>({&input, &kernel, &bias})) {
    ImplPtr<T> xi = input.impl(), wi = kernel.impl(), bi = bias.impl(), oi = out.impl();
    ssam::detail::record(g, "conv2d", {xi, wi, bi}, out,
                         [=, padded = std::move(padded)] {
      const T* go = oi->grad.data();
      const T* w = wi->data.data();
      accumulate(bi, [&](T* gb) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* gp = go + (n * Cout + co) * H * W;
            T s = 0;
            for (std::size_t i = 0; i < H * W; ++i) s += gp[i];
            gb[co] += s;
          }
      });
      accumulate(wi, [&](T* gw) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* gp = go + (n * Cout + co) * H * W;
            const std::size_t group = co / out_per_group;
            for (std::size_t cg = 0; cg < Cg; ++cg) {
              const T* src = padded.data() + (n * Cin + group * Cg + cg) * PH * PW;
              for (std::size_t ky = 0; ky < KH; ++ky)
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  T s = 0;
                  for (std::size_t yy = 0; yy < H; ++yy) {
                    const T* srow = src + (yy + ky) * PW + kx;
                    const T* grow = gp + yy * W;
                    for (std::size_t xx = 0; xx < W; ++xx) s += grow[xx] * srow[xx];
                  }
                  gw[((co * Cg + cg) * KH + ky) * KW + kx] += s;
                }
            }
          }
      });
      accumulate(xi, [&](T* gx) {
        std::vector<T> gpad(N * Cin * PH * PW, T(0));
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* gp = go + (n * Cout + co) * H * W;
            const std::size_t group = co / out_per_group;
            for (std::size_t cg = 0; cg < Cg; ++cg) {
              T* dst = gpad.data() + (n * Cin + group * Cg + cg) * PH * PW;
              for (std::size_t ky = 0; ky < KH; ++ky)
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const T wv = w[((co * Cg + cg) * KH + ky) * KW + kx];
                  for (std::size_t yy = 0; yy < H; ++yy) {
                    T* drow = dst + (yy + ky) * PW + kx;
                    const T* grow = gp + yy * W;
                    for (std::size_t xx = 0; xx < W; ++xx) drow[xx] += wv * grow[xx];
                  }
                }
            }
          }
        unpad_accumulate(gpad.data(), gx, N * Cin, H, W, ph, pw, padding);
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  detail::require_rank(input, 4, "conv_transpose2d");
  detail::require_rank(kernel, 4, "conv_transpose2d(kernel)");
  const std::size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Cout = kernel.dim(1), S = kernel.dim(2);
  if (kernel.dim(0) != Cin || kernel.dim(3) != S || S == 0) {
    throw DimensionError("conv_transpose2d: kernel " + shape_string(kernel.shape()) + " incompatible with input " +
                         shape_string(input.shape()));
  }
  if (bias.defined() && bias.numel() != Cout) throw DimensionError("conv_transpose2d: bias size mismatch");
  const std::size_t OH = H * S, OW = W * S;
  Tensor<T> out(Shape{N, Cout, OH, OW});
  T* y = out.mutable_data().data();
  const T* x = input.data().data();
  const T* w = kernel.data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Cout; ++co) {
      T* plane = y + (n * Cout + co) * OH * OW;
      if (bias.defined()) std::fill(plane, plane + OH * OW, bias[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* src = x + (n * Cin + ci) * H * W;
        for (std::size_t r = 0; r < S; ++r)
          for (std::size_t c = 0; c < S; ++c) {
            const T wv = w[((ci * Cout + co) * S + r) * S + c];
            for (std::size_t yy = 0; yy < H; ++yy) {
              T* orow = plane + (yy * S + r) * OW + c;
              const T* srow = src + yy * W;
              for (std::size_t xx = 0; xx < W; ++xx) orow[xx * S] += wv * srow[xx];
            }
          }
      }
    }
  ssam::detail::check_finite(out, "conv_transpose2d");
  if (auto* g = ssam::detail::recorder<T>({&input, &kernel, &bias})) {
    ImplPtr<T> xi = input.impl(), wi = kernel.impl(), bi = bias.impl(), oi = out.impl();
    ssam::detail::record(g, "conv_transpose2d", {xi, wi, bi}, out, [=] {
      const T* go = oi->grad.data();
      const T* x = xi->data.data();
      const T* w = wi->data.data();
      accumulate(bi, [&](T* gb) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t co = 0; co < Cout; ++co) {
            T s = 0;
            const T* gp = go + (n * Cout + co) * OH * OW;
            for (std::size_t i = 0; i < OH * OW; ++i) s += gp[i];
            gb[co] += s;
          }
      });
      const bool want_x = xi->requires_grad, want_w = wi->requires_grad;
      T* gx = want_x ? xi->grad_buffer() : nullptr;
      T* gw = want_w ? wi->grad_buffer() : nullptr;
      if (!want_x && !want_w) return;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
          const T* gp = go + (n * Cout + co) * OH * OW;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const T* src = x + (n * Cin + ci) * H * W;
            for (std::size_t r = 0; r < S; ++r)
              for (std::size_t c = 0; c < S; ++c) {
                const std::size_t widx = ((ci * Cout + co) * S + r) * S + c;
                const T wv = w[widx];
                T s = 0;
                for (std::size_t yy = 0; yy < H; ++yy) {
                  const T* grow = gp + (yy * S + r) * OW + c;
                  for (std::size_t xx = 0; xx < W; ++xx) {
                    const T gval = grow[xx * S];
                    if (want_x) gx[(n * Cin + ci) * H * W + yy * W + xx] += wv * gval;
                    s += gval * src[yy * W + xx];
                  }
                }
                if (want_w) gw[widx] += s;
              }
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window) {
  detail::require_rank(input, 4, "max_pool2d");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (window == 0 || H % window != 0 || W % window != 0) {
    throw DimensionError("max_pool2d: " + shape_string(input.shape()) + " not divisible by window " +
                         std::to_string(window));
  }
  const std::size_t OH = H / window, OW = W / window;
  Tensor<T> out(Shape{N, C, OH, OW});
  std::vector<std::size_t> argmax(out.numel());
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = p * H * W + oy * window * W + ox * window;
        for (std::size_t r = 0; r < window; ++r)
          for (std::size_t c = 0; c < window; ++c) {
            const std::size_t idx = p * H * W + (oy * window + r) * W + ox * window + c;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (p * OH + oy) * OW + ox;
        y[o] = x[best];
        argmax[o] = best;
      }
  if (auto* g = ssam::detail::recorder<T>({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    ssam::detail::record(g, "max_pool2d", {xi}, out, [xi, oi, argmax = std::move(argmax)] {
      accumulate(xi, [&](T* gx) {
        for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += oi->grad[o];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, std::size_t factor) {
  detail::require_rank(input, 4, "upsample_nearest");
  if (factor == 0) throw ConfigError("upsample_nearest: factor must be positive");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = H * factor, OW = W * factor;
  Tensor<T> out(Shape{N, C, OH, OW});
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox)
        y[(p * OH + oy) * OW + ox] = x[(p * H + oy / factor) * W + ox / factor];
  if (auto* g = ssam::detail::recorder<T>({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    ssam::detail::record(g, "upsample_nearest", {xi}, out, [=] {
      accumulate(xi, [&](T* gx) {
        for (std::size_t p = 0; p < N * C; ++p)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox)
              gx[(p * H + oy / factor) * W + ox / factor] += oi->grad[(p * OH + oy) * OW + ox];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  detail::require_rank(input, 4, "global_avg_pool");
  const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  if (HW == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  Tensor<T> out(Shape{N, C});
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < N * C; ++p) {
    T s = 0;
    for (std::size_t i = 0; i < HW; ++i) s += x[p * HW + i];
    y[p] = s / static_cast<T>(HW);
  }
  ssam::detail::check_finite(out, "global_avg_pool");
  if (auto* g = ssam::detail::recorder<T>({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    ssam::detail::record(g, "global_avg_pool", {xi}, out, [=] {
      accumulate(xi, [&](T* gx) {
        for (std::size_t p = 0; p < N * C; ++p) {
          const T v = oi->grad[p] / static_cast<T>(HW);
          for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += v;
        }
      });
    });
  }
  return out;
}

namespace {

template <typename T>
void require_nc(const Tensor<T>& x, const Tensor<T>& s, const char* op) {
  detail::require_rank(x, 4, op);
  if (s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
    throw DimensionError(std::string(op) + ": broadcast operand " + shape_string(s.shape()) +
                         " does not match " + shape_string(x.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> mul_nc(const Tensor<T>& x, const Tensor<T>& s) {
  require_nc(x, s, "mul_nc");
  const std::size_t P = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < HW; ++i) y[p * HW + i] = x[p * HW + i] * s[p];
  ssam::detail::check_finite(out, "mul_nc");
  if (auto* g = ssam::detail::recorder<T>({&x, &s})) {
    ImplPtr<T> xi = x.impl(), si = s.impl(), oi = out.impl();
    ssam::detail::record(g, "mul_nc", {xi, si}, out, [=] {
      const T* go = oi->grad.data();
      accumulate(xi, [&](T* gx) {
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += go[p * HW + i] * si->data[p];
      });
      accumulate(si, [&](T* gs) {
        for (std::size_t p = 0; p < P; ++p) {
          T acc = 0;
          for (std::size_t i = 0; i < HW; ++i) acc += go[p * HW + i] * xi->data[p * HW + i];
          gs[p] += acc;
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_nc(const Tensor<T>& x, const Tensor<T>& s) {
  require_nc(x, s, "add_nc");
  const std::size_t P = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < HW; ++i) y[p * HW + i] = x[p * HW + i] + s[p];
  ssam::detail::check_finite(out, "add_nc");
  if (auto* g = ssam::detail::recorder<T>({&x, &s})) {
    ImplPtr<T> xi = x.impl(), si = s.impl(), oi = out.impl();
    ssam::detail::record(g, "add_nc", {xi, si}, out, [=] {
      const T* go = oi->grad.data();
      accumulate(xi, [&](T* gx) {
        for (std::size_t i = 0; i < P * HW; ++i) gx[i] += go[i];
      });
      accumulate(si, [&](T* gs) {
        for (std::size_t p = 0; p < P; ++p) {
          T acc = 0;
          for (std::size_t i = 0; i < HW; ++i) acc += go[p * HW + i];
          gs[p] += acc;
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  if (!x.defined() || x.rank() < 2 || s.rank() != 1 || s.dim(0) != x.dim(1)) {
    throw DimensionError("scale_channels: scale " + shape_string(s.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), inner = x.numel() / (N * C);
  Tensor<T> out(x.shape());
  T* y = out.mutable_data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < inner; ++i) y[(n * C + c) * inner + i] = x[(n * C + c) * inner + i] * s[c];
  ssam::detail::check_finite(out, "scale_channels");
  if (auto* g = ssam::detail::recorder<T>({&x, &s})) {
    ImplPtr<T> xi = x.impl(), si = s.impl(), oi = out.impl();
    ssam::detail::record(g, "scale_channels", {xi, si}, out, [=] {
      const T* go = oi->grad.data();
      accumulate(xi, [&](T* gx) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < inner; ++i) gx[(n * C + c) * inner + i] += go[(n * C + c) * inner + i] * si->data[c];
      });
      accumulate(si, [&](T* gs) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < inner; ++i) acc += go[(n * C + c) * inner + i] * xi->data[(n * C + c) * inner + i];
            gs[c] += acc;
          }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> mix(std::span<const Tensor<T>> parts, const Tensor<T>& w) {
  if (parts.empty()) throw DimensionError("mix: no parts");
  const std::size_t K = parts.size();
  const Shape& shape = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != shape) {
      throw ContractError("mix: part shape " + shape_string(p.shape()) + " differs from " + shape_string(shape));
    }
  }
  const std::size_t N = shape.at(0);
  if (w.rank() != 2 || w.dim(0) != N || w.dim(1) != K) {
    throw DimensionError("mix: weights " + shape_string(w.shape()) + " do not match " + std::to_string(K) +
                         " parts of batch " + std::to_string(N));
  }
  const std::size_t inner = parts[0].numel() / N;
  Tensor<T> out(shape);
  T* y = out.mutable_data().data();
  for (std::size_t k = 0; k < K; ++k) {
    const T* src = parts[k].data().data();
    for (std::size_t n = 0; n < N; ++n) {
      const T wk = w[n * K + k];
      for (std::size_t i = 0; i < inner; ++i) y[n * inner + i] += wk * src[n * inner + i];
    }
  }
  ssam::detail::check_finite(out, "mix");
  Graph<T>* g = ssam::detail::recorder<T>({&w});
  for (const auto& p : parts) {
    if (g == nullptr) g = ssam::detail::recorder<T>({&p});
  }
  if (g != nullptr) {
    std::vector<ImplPtr<T>> inputs;
    for (const auto& p : parts) inputs.push_back(p.impl());
    ImplPtr<T> wi = w.impl(), oi = out.impl();
    inputs.push_back(wi);
    ssam::detail::record(g, "mix", inputs, out, [inputs, wi, oi, K, N, inner] {
      const T* go = oi->grad.data();
      for (std::size_t k = 0; k < K; ++k) {
        accumulate(inputs[k], [&](T* gp) {
          for (std::size_t n = 0; n < N; ++n) {
            const T wk = wi->data[n * K + k];
            for (std::size_t i = 0; i < inner; ++i) gp[n * inner + i] += wk * go[n * inner + i];
          }
        });
      }
      accumulate(wi, [&](T* gw) {
        for (std::size_t k = 0; k < K; ++k) {
          const T* src = inputs[k]->data.data();
          for (std::size_t n = 0; n < N; ++n) {
            T acc = 0;
            for (std::size_t i = 0; i < inner; ++i) acc += go[n * inner + i] * src[n * inner + i];
            gw[n * K + k] += acc;
          }
        }
      });
    });
  }
  return out;
}

#define SSAM_CONV(T)                                                                                         \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, Padding);  \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> upsample_nearest<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                                   \
  template Tensor<T> mul_nc<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> add_nc<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mix<T>(std::span<const Tensor<T>>, const Tensor<T>&);

SSAM_INSTANTIATE_BOTH(SSAM_CONV)

}  // namespace ssam::ops
