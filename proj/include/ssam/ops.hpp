#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssam/tensor.hpp"

// Differentiable primitives. Every function checks its output for
// non-finite values and, when recording, appends one node to the active
// Graph. Feature maps are NCHW throughout.
namespace ssam::ops {

enum class Padding { Zero, Reflect };

// Elementwise (operands must have identical shapes).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
/// tanh-approximated GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
/// sqrt(a + eps), eps > 0 keeps the derivative finite at zero.
template <typename T> Tensor<T> sqrt_eps(const Tensor<T>& a, T eps);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// (N, K) -> (K), average over rows.
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// (A, B, C) -> (A, C, B).
template <typename T> Tensor<T> transpose12(const Tensor<T>& a);
/// Channels [begin, begin + count) of an NCHW tensor.
template <typename T> Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count);
/// Non-overlapping p x p patches: (N, C, H, W) -> (N, (H/p)(W/p), C p p).
template <typename T> Tensor<T> patchify(const Tensor<T>& image, std::size_t patch);

// Dense layers.
/// x (M, K), weight (N, K), optional bias (N) -> (M, N).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});
/// Row-wise layer norm over the last axis of x (M, C).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
/// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax_stable(const Tensor<T>& logits, std::size_t axis);
/// Scaled dot-product self attention; q, k, v are (N, L, C) split into `heads`.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads);

// Convolution family (stride 1, odd kernels, "same" output size).
/// kernel (Cout, Cin / groups, kh, kw), optional bias (Cout).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {},
                 std::size_t groups = 1, Padding padding = Padding::Zero);
/// Non-overlapping transposed convolution, kernel (Cin, Cout, s, s), stride s.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {});
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window);
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& input, std::size_t factor);
/// (N, C, H, W) -> (N, C).
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& input);

// Broadcasting helpers.
/// x (N, C, H, W) times s (N, C) broadcast over space.
template <typename T> Tensor<T> mul_nc(const Tensor<T>& x, const Tensor<T>& s);
/// x (N, C, H, W) plus s (N, C) broadcast over space.
template <typename T> Tensor<T> add_nc(const Tensor<T>& x, const Tensor<T>& s);
/// x (N, C, ...) times s (C).
template <typename T> Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s);
/// sum_k w[n, k] * parts[k][n, ...]; w is (N, K).
template <typename T> Tensor<T> mix(std::span<const Tensor<T>> parts, const Tensor<T>& w);

// Sampling.
/// Bilinear lookup of input (N, C, H, W) at coords (N, P, 2) holding (y, x).
/// Corners outside the image contribute zero. Returns (N, C, P).
template <typename T> Tensor<T> bilinear_sample(const Tensor<T>& input, const Tensor<T>& coords);
/// Converts offsets (N, 2K, H, W) for a k x k grid (K = k^2, channel 2t is
/// dy and 2t+1 is dx of tap t) into absolute sampling coords (N, K H W, 2).
template <typename T> Tensor<T> offsets_to_coords(const Tensor<T>& offsets, std::size_t kernel);
/// samples (N, C, K, P), weights (C, K) -> (N, C, P).
template <typename T> Tensor<T> tap_sum(const Tensor<T>& samples, const Tensor<T>& weights);

/// One explicit Euler step of div(c grad x) with conductances averaged onto
/// half-grid points and zero flux across the image border.
template <typename T> Tensor<T> diffusion_step(const Tensor<T>& x, const Tensor<T>& conductance, T dt);

}  // namespace ssam::ops
