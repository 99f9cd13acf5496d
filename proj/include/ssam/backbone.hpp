#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "ssam/moe.hpp"

namespace ssam::backbone {

/// Output bias at init, logit of a 1% foreground rate.
inline const double kPriorLogit = -std::log(99.0);

struct EncoderConfig {
  std::size_t patch = 4;
  std::size_t channels = 32;
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 512;
};

template <typename T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// Patch embedding plus pre-norm transformer blocks. Every parameter has
/// requires_grad = false.
template <typename T>
struct FrozenEncoder {
  EncoderConfig config;
  std::uint64_t seed = 0;
  Tensor<T> patch_w;  // (C, p * p)
  Tensor<T> patch_b;
  std::vector<BlockParams<T>> blocks;

  void collect(ParamList<T>& out) const;
  std::uint64_t checksum() const;
};

template <typename T>
FrozenEncoder<T> init_frozen_backbone(std::uint64_t seed, const EncoderConfig& config = {});

/// (N, 1, H, W) -> tokens (N, L, C).
template <typename T>
Tensor<T> patch_embed(const FrozenEncoder<T>& enc, const Tensor<T>& image);

/// One transformer block on tokens (N, L, C).
template <typename T>
Tensor<T> block_forward(const BlockParams<T>& block, const Tensor<T>& tokens, std::size_t heads);

/// (N, L, C) <-> (N, C, s, s) with L = s * s.
template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens);
template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& grid);

template <typename T>
struct EncoderOutput {
  Tensor<T> grid;  // (N, C, s, s)
  std::vector<moe::RoutingRecord<T>> records;
};

/// Runs blocks first..last (1-based, inclusive) on tokens. Injected layers
/// apply x <- block(x) + adapter(x).
template <typename T>
Tensor<T> run_blocks(const FrozenEncoder<T>& enc, Tensor<T> tokens, std::size_t first, std::size_t last,
                     std::type_identity_t<const moe::AdapterState<T>*> adapter = nullptr,
                     std::type_identity_t<std::vector<moe::RoutingRecord<T>>*> records = nullptr);

/// Full encoder. Throws DimensionError when the image side is not a
/// multiple of the patch size or the token count is not a perfect square.
template <typename T>
EncoderOutput<T> encoder_forward(const FrozenEncoder<T>& enc, const Tensor<T>& image,
                                 std::type_identity_t<const moe::AdapterState<T>*> adapter = nullptr);

template <typename T>
struct MaskDecoder {
  Tensor<T> up1_w, up1_b;  // (C, C/2, 2, 2)
  Tensor<T> up2_w, up2_b;  // (C/2, C/4, 2, 2)
  Tensor<T> head_w, head_b;  // (1, C/4, 1, 1)

  static MaskDecoder init(std::size_t channels, Rng& rng);
  void collect(ParamList<T>& out) const;
};

/// Token grid (N, C, s, s) or tokens (N, L, C) -> logits (N, 1, 4s, 4s).
template <typename T>
Tensor<T> decode_mask(const Tensor<T>& tokens, const MaskDecoder<T>& dec);

/// Depthwise-separable encoder-decoder: 3 pooling stages, base width 16,
/// additive skips, nearest upsampling.
template <typename T>
struct StudentModel {
  struct SeparableConv {
    Tensor<T> dw_w, dw_b;  // (Cin, 1, 3, 3)
    Tensor<T> pw_w, pw_b;  // (Cout, Cin, 1, 1)
  };
  Tensor<T> stem_w, stem_b;  // (16, 1, 3, 3)
  SeparableConv enc1, enc2, enc3, mid, dec3, dec2, dec1;
  Tensor<T> head_w, head_b;  // (1, 16, 1, 1)

  static StudentModel init(Rng& rng, std::size_t width = 16);
  void collect(ParamList<T>& out) const;
};

/// (N, 1, H, W) -> logits (N, 1, H, W); H and W must be multiples of 8.
template <typename T>
Tensor<T> student_forward(const StudentModel<T>& s, const Tensor<T>& image);

/// Order-stable digest of values rounded to 1e-6, insensitive to the last
/// bits that fused multiply-add contraction can change.
template <typename T>
std::uint64_t output_hash(const Tensor<T>& t);

}  // namespace ssam::backbone
