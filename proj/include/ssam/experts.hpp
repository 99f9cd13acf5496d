#pragma once

#include <string>
#include <utility>

#include "ssam/ops.hpp"
#include "ssam/params.hpp"

// Four feature-refinement experts operating on (N, C, h, w) token grids.
// Each returns a tensor of the input shape.
namespace ssam::experts {

inline constexpr std::size_t kSubbands = 4;
inline constexpr std::size_t kTaps = 9;

/// Fixed depthwise 3x3 Sobel responses (gx, gy) with mirror padding.
/// gx responds to change along the width axis.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> sobel_gradients(const Tensor<T>& x);

// Diffusion refinement: T steps of x <- x + dt div(c grad x) where the
// conductance c = controller(|grad x|) is recomputed each step.
template <typename T>
struct PimdoParams {
  Tensor<T> ctrl_w1;  // (hidden, 1)
  Tensor<T> ctrl_b1;  // (hidden)
  Tensor<T> ctrl_w2;  // (1, hidden)
  Tensor<T> ctrl_b2;  // (1)
  T dt = T(0.2);
  std::size_t steps = 3;

  static PimdoParams init(Rng& rng, std::size_t hidden = 8);
  void collect(const std::string& prefix, ParamList<T>& out) const;
  /// Pins the controller output at exactly 1 (open) or 0 (closed).
  void force_conductance(bool open);
};

/// Conductance map in (0, 1) for a gradient-magnitude map of any shape.
template <typename T>
Tensor<T> pimdo_conductance(const Tensor<T>& magnitude, const PimdoParams<T>& p);

/// Throws ConfigError unless 0 < dt <= 0.25.
template <typename T>
Tensor<T> pimdo_forward(const Tensor<T>& x, const PimdoParams<T>& p);

// Learnable sub-band split / gate / merge. Analysis is a depthwise bank of
// four 3x3 filters per channel, synthesis a grouped conv that merges the
// four gated sub-bands back into one channel.
template <typename T>
struct SpdParams {
  Tensor<T> analysis;   // (4C, 1, 3, 3); output channel 4c + j is sub-band j of channel c
  Tensor<T> synthesis;  // (C, 4, 3, 3)
  Tensor<T> att_w1;     // (4 * 4, 4)
  Tensor<T> att_b1;
  Tensor<T> att_w2;  // (4, 16)
  Tensor<T> att_b2;

  /// Analysis starts at the separable [1 2 1]/4, [-1 2 -1]/4 products,
  /// synthesis at the unit impulse; the bank then reconstructs exactly.
  static SpdParams init(std::size_t channels, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
  /// Saturates every gate at 1 (open) or 0 (closed).
  void force_gates(bool open);
};

/// (N, C, h, w) -> sub-bands (N, 4C, h, w).
template <typename T>
Tensor<T> spd_analyze(const Tensor<T>& x, const SpdParams<T>& p);
/// Per-(sub-band, channel) gates in (0, 1), shape (N, 4C).
template <typename T>
Tensor<T> spd_gates(const Tensor<T>& subbands, const SpdParams<T>& p);
template <typename T>
Tensor<T> spd_synthesize(const Tensor<T>& subbands, const Tensor<T>& gates, const SpdParams<T>& p);
template <typename T>
Tensor<T> spd_forward(const Tensor<T>& x, const SpdParams<T>& p);

// Content-conditioned affine modulation of a base 3x3 conv.
template <typename T>
struct HplsmParams {
  Tensor<T> base_w;  // (C, C, 3, 3)
  Tensor<T> base_b;  // (C)
  Tensor<T> hyp_w1;  // (hidden, C, 3, 3)
  Tensor<T> hyp_b1;
  Tensor<T> hyp_w2;  // (2C, hidden, 3, 3), first C channels feed gamma
  Tensor<T> hyp_b2;
  Tensor<T> fc_w;  // (2C, 2C)
  Tensor<T> fc_b;  // (2C), gamma half starts at 1

  static HplsmParams init(std::size_t channels, Rng& rng, std::size_t hidden = 8);
  void collect(const std::string& prefix, ParamList<T>& out) const;
  /// Pins gamma and beta to constants by zeroing the hypernetwork output.
  void force_modulation(T gamma, T beta);
};

/// Returns (gamma, beta), each (N, C, h, w).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> hplsm_modulation(const Tensor<T>& x, const HplsmParams<T>& p);
template <typename T>
Tensor<T> hplsm_forward(const Tensor<T>& x, const HplsmParams<T>& p);

// Deformable 3x3 sampling with offsets bounded to (-2, 2).
template <typename T>
struct TgdsParams {
  Tensor<T> off_w;  // (18, C, 3, 3), zero at init
  Tensor<T> off_b;  // (18)
  Tensor<T> agg_w;  // (C, 9), tap t = 3 * ky + kx

  static TgdsParams init(std::size_t channels, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct TgdsOutput {
  Tensor<T> y;
  Tensor<T> coords;  // (N, 9 h w, 2) sampling positions (y, x)
};

template <typename T>
TgdsOutput<T> tgds_forward(const Tensor<T>& x, const TgdsParams<T>& p);

/// Bounded offsets 2 tanh(conv(x)), shape (N, 18, h, w).
template <typename T>
Tensor<T> tgds_offsets(const Tensor<T>& x, const TgdsParams<T>& p);

}  // namespace ssam::experts
