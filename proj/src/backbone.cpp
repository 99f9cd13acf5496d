#include "ssam/backbone.hpp"

#include <cmath>

#include "ops_detail.hpp"

namespace ssam::backbone {

namespace {

template <typename T>
Tensor<T> frozen_normal(Shape shape, Rng& rng, double stddev) {
  return normal_param<T>(std::move(shape), rng, stddev).set_requires_grad(false);
}

template <typename T>
Tensor<T> frozen_constant(Shape shape, T value) {
  return Tensor<T>(std::move(shape), value);
}

std::size_t grid_side(std::size_t tokens) {
  const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (s * s != tokens) throw DimensionError("token count " + std::to_string(tokens) + " is not a perfect square");
  return s;
}

}  // namespace

template <typename T>
void BlockParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  const std::pair<const char*, const Tensor<T>*> items[] = {
      {"ln1_g", &ln1_g}, {"ln1_b", &ln1_b}, {"wq", &wq},         {"bq", &bq},         {"wk", &wk},
      {"bk", &bk},       {"wv", &wv},       {"bv", &bv},         {"wo", &wo},         {"bo", &bo},
      {"ln2_g", &ln2_g}, {"ln2_b", &ln2_b}, {"mlp_w1", &mlp_w1}, {"mlp_b1", &mlp_b1}, {"mlp_w2", &mlp_w2},
      {"mlp_b2", &mlp_b2}};
  for (const auto& [name, t] : items) out.push_back({prefix + name, *t});
}

template <typename T>
void FrozenEncoder<T>::collect(ParamList<T>& out) const {
  out.push_back({"encoder.patch_w", patch_w});
  out.push_back({"encoder.patch_b", patch_b});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect("encoder.block" + std::to_string(i + 1) + ".", out);
  }
}

template <typename T>
std::uint64_t FrozenEncoder<T>::checksum() const {
  ParamList<T> params;
  collect(params);
  return ssam::checksum(params);
}

template <typename T>
FrozenEncoder<T> init_frozen_backbone(std::uint64_t seed, const EncoderConfig& config) {
  if (config.channels % config.heads != 0) throw ConfigError("encoder: heads must divide channels");
  Rng rng(seed);
  FrozenEncoder<T> enc;
  enc.config = config;
  enc.seed = seed;
  const std::size_t c = config.channels, pp = config.patch * config.patch, h = config.mlp_hidden;
  enc.patch_w = frozen_normal<T>({c, pp}, rng, fan_in_std(pp));
  enc.patch_b = frozen_normal<T>({c}, rng, 0.02);
  // residual branch init scale
  const double branch = 0.5 / std::sqrt(static_cast<double>(config.layers));
  for (std::size_t l = 0; l < config.layers; ++l) {
    BlockParams<T> b;
    b.ln1_g = frozen_constant<T>({c}, T(1));
    b.ln1_b = frozen_constant<T>({c}, T(0));
    b.wq = frozen_normal<T>({c, c}, rng, fan_in_std(c));
    b.bq = frozen_constant<T>({c}, T(0));
    b.wk = frozen_normal<T>({c, c}, rng, fan_in_std(c));
    b.bk = frozen_constant<T>({c}, T(0));
    b.wv = frozen_normal<T>({c, c}, rng, fan_in_std(c));
    b.bv = frozen_constant<T>({c}, T(0));
    b.wo = frozen_normal<T>({c, c}, rng, branch * fan_in_std(c));
    b.bo = frozen_constant<T>({c}, T(0));
    b.ln2_g = frozen_constant<T>({c}, T(1));
    b.ln2_b = frozen_constant<T>({c}, T(0));
    b.mlp_w1 = frozen_normal<T>({h, c}, rng, fan_in_std(c));
    b.mlp_b1 = frozen_constant<T>({h}, T(0));
    b.mlp_w2 = frozen_normal<T>({c, h}, rng, branch * fan_in_std(h));
    b.mlp_b2 = frozen_constant<T>({c}, T(0));
    enc.blocks.push_back(std::move(b));
  }
  return enc;
}

template <typename T>
Tensor<T> patch_embed(const FrozenEncoder<T>& enc, const Tensor<T>& image) {
  if (!image.defined() || image.rank() != 4 || image.dim(1) != 1) {
    throw DimensionError("patch_embed: expected (N, 1, H, W) image");
  }
  auto patches = ops::patchify(image, enc.config.patch);
  const std::size_t n = patches.dim(0), l = patches.dim(1);
  grid_side(l);
  auto flat = ops::reshape(patches, {n * l, patches.dim(2)});
  return ops::reshape(ops::linear(flat, enc.patch_w, enc.patch_b), {n, l, enc.config.channels});
}

template <typename T>
Tensor<T> block_forward(const BlockParams<T>& b, const Tensor<T>& tokens, std::size_t heads) {
  const std::size_t n = tokens.dim(0), l = tokens.dim(1), c = tokens.dim(2);
  auto x = ops::reshape(tokens, {n * l, c});
  auto h = ops::layer_norm(x, b.ln1_g, b.ln1_b);
  auto q = ops::reshape(ops::linear(h, b.wq, b.bq), {n, l, c});
  auto k = ops::reshape(ops::linear(h, b.wk, b.bk), {n, l, c});
  auto v = ops::reshape(ops::linear(h, b.wv, b.bv), {n, l, c});
  auto att = ops::reshape(ops::attention(q, k, v, heads), {n * l, c});
  x = ops::add(x, ops::linear(att, b.wo, b.bo));
  auto m = ops::gelu(ops::linear(ops::layer_norm(x, b.ln2_g, b.ln2_b), b.mlp_w1, b.mlp_b1));
  x = ops::add(x, ops::linear(m, b.mlp_w2, b.mlp_b2));
  return ops::reshape(x, {n, l, c});
}

template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens) {
  if (tokens.rank() != 3) throw DimensionError("tokens_to_grid: expected (N, L, C)");
  const std::size_t s = grid_side(tokens.dim(1));
  return ops::reshape(ops::transpose12(tokens), {tokens.dim(0), tokens.dim(2), s, s});
}

template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& grid) {
  if (grid.rank() != 4) throw DimensionError("grid_to_tokens: expected (N, C, s, s)");
  return ops::transpose12(ops::reshape(grid, {grid.dim(0), grid.dim(1), grid.dim(2) * grid.dim(3)}));
}

template <typename T>
Tensor<T> run_blocks(const FrozenEncoder<T>& enc, Tensor<T> tokens, std::size_t first, std::size_t last,
                     std::type_identity_t<const moe::AdapterState<T>*> adapter,
                     std::type_identity_t<std::vector<moe::RoutingRecord<T>>*> records) {
  if (first == 0 || last > enc.blocks.size()) throw ContractError("run_blocks: layer range out of bounds");
  for (std::size_t l = first; l <= last; ++l) {
    auto out = block_forward(enc.blocks[l - 1], tokens, enc.config.heads);
    if (adapter != nullptr && adapter->injects(l)) {
      auto res = moe::adapter_apply(tokens_to_grid(out), tokens_to_grid(tokens), l, *adapter);
      out = grid_to_tokens(res.out);
      if (records != nullptr) records->push_back(res.record);
    }
    tokens = out;
  }
  return tokens;
}

template <typename T>
EncoderOutput<T> encoder_forward(const FrozenEncoder<T>& enc, const Tensor<T>& image,
                                 std::type_identity_t<const moe::AdapterState<T>*> adapter) {
  EncoderOutput<T> out;
  auto tokens = run_blocks(enc, patch_embed(enc, image), 1, enc.blocks.size(), adapter, &out.records);
  out.grid = tokens_to_grid(tokens);
  return out;
}

template <typename T>
MaskDecoder<T> MaskDecoder<T>::init(std::size_t channels, Rng& rng) {
  MaskDecoder d;
  const std::size_t c1 = channels / 2, c2 = channels / 4;
  d.up1_w = normal_param<T>({channels, c1, 2, 2}, rng, std::sqrt(2.0 / channels));
  d.up1_b = constant_param<T>({c1}, T(0));
  d.up2_w = normal_param<T>({c1, c2, 2, 2}, rng, std::sqrt(2.0 / c1));
  d.up2_b = constant_param<T>({c2}, T(0));
  d.head_w = normal_param<T>({1, c2, 1, 1}, rng, fan_in_std(c2));
  d.head_b = constant_param<T>({1}, T(kPriorLogit));
  return d;
}

template <typename T>
void MaskDecoder<T>::collect(ParamList<T>& out) const {
  out.push_back({"decoder.up1_w", up1_w});
  out.push_back({"decoder.up1_b", up1_b});
  out.push_back({"decoder.up2_w", up2_w});
  out.push_back({"decoder.up2_b", up2_b});
  out.push_back({"decoder.head_w", head_w});
  out.push_back({"decoder.head_b", head_b});
}

template <typename T>
Tensor<T> decode_mask(const Tensor<T>& tokens, const MaskDecoder<T>& dec) {
  Tensor<T> grid = tokens.rank() == 3 ? tokens_to_grid(tokens) : tokens;
  if (grid.rank() != 4 || grid.dim(2) != grid.dim(3)) throw DimensionError("decode_mask: token grid must be square");
  auto x = ops::relu(ops::conv_transpose2d(grid, dec.up1_w, dec.up1_b));
  x = ops::relu(ops::conv_transpose2d(x, dec.up2_w, dec.up2_b));
  return ops::conv2d(x, dec.head_w, dec.head_b);
}

namespace {

template <typename T>
typename StudentModel<T>::SeparableConv separable(std::size_t cin, std::size_t cout, Rng& rng) {
  typename StudentModel<T>::SeparableConv s;
  s.dw_w = normal_param<T>({cin, 1, 3, 3}, rng, fan_in_std(9));
  s.dw_b = constant_param<T>({cin}, T(0));
  s.pw_w = normal_param<T>({cout, cin, 1, 1}, rng, std::sqrt(2.0 / cin));
  s.pw_b = constant_param<T>({cout}, T(0));
  return s;
}

template <typename T>
Tensor<T> apply(const typename StudentModel<T>::SeparableConv& s, const Tensor<T>& x) {
  auto d = ops::conv2d(x, s.dw_w, s.dw_b, x.dim(1));
  return ops::relu(ops::conv2d(d, s.pw_w, s.pw_b));
}

template <typename T>
void collect_separable(const std::string& prefix, const typename StudentModel<T>::SeparableConv& s,
                       ParamList<T>& out) {
  out.push_back({prefix + "dw_w", s.dw_w});
  out.push_back({prefix + "dw_b", s.dw_b});
  out.push_back({prefix + "pw_w", s.pw_w});
  out.push_back({prefix + "pw_b", s.pw_b});
}

}  // namespace

template <typename T>
StudentModel<T> StudentModel<T>::init(Rng& rng, std::size_t width) {
  StudentModel s;
  const std::size_t w1 = width, w2 = 2 * width;
  s.stem_w = normal_param<T>({w1, 1, 3, 3}, rng, std::sqrt(2.0 / 9));
  s.stem_b = constant_param<T>({w1}, T(0));
  s.enc1 = separable<T>(w1, w1, rng);
  s.enc2 = separable<T>(w1, w2, rng);
  s.enc3 = separable<T>(w2, w2, rng);
  s.mid = separable<T>(w2, w2, rng);
  s.dec3 = separable<T>(w2, w2, rng);
  s.dec2 = separable<T>(w2, w1, rng);
  s.dec1 = separable<T>(w1, w1, rng);
  s.head_w = normal_param<T>({1, w1, 1, 1}, rng, fan_in_std(w1));
  s.head_b = constant_param<T>({1}, T(kPriorLogit));
  return s;
}

template <typename T>
void StudentModel<T>::collect(ParamList<T>& out) const {
  out.push_back({"student.stem_w", stem_w});
  out.push_back({"student.stem_b", stem_b});
  collect_separable<T>("student.enc1.", enc1, out);
  collect_separable<T>("student.enc2.", enc2, out);
  collect_separable<T>("student.enc3.", enc3, out);
  collect_separable<T>("student.mid.", mid, out);
  collect_separable<T>("student.dec3.", dec3, out);
  collect_separable<T>("student.dec2.", dec2, out);
  collect_separable<T>("student.dec1.", dec1, out);
  out.push_back({"student.head_w", head_w});
  out.push_back({"student.head_b", head_b});
}

template <typename T>
Tensor<T> student_forward(const StudentModel<T>& s, const Tensor<T>& image) {
  if (!image.defined() || image.rank() != 4 || image.dim(1) != 1) {
    throw DimensionError("student_forward: expected (N, 1, H, W) image");
  }
  if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
    throw DimensionError("student_forward: image side must be a multiple of 8, got " + shape_string(image.shape()));
  }
  auto x0 = ops::relu(ops::conv2d(image, s.stem_w, s.stem_b));
  auto e1 = apply<T>(s.enc1, x0);                           // full
  auto e2 = apply<T>(s.enc2, ops::max_pool2d(e1, 2));       // 1/2
  auto e3 = apply<T>(s.enc3, ops::max_pool2d(e2, 2));       // 1/4
  auto m = apply<T>(s.mid, ops::max_pool2d(e3, 2));         // 1/8
  auto d3 = apply<T>(s.dec3, ops::add(ops::upsample_nearest(m, 2), e3));
  auto d2 = apply<T>(s.dec2, ops::add(ops::upsample_nearest(d3, 2), e2));
  auto d1 = apply<T>(s.dec1, ops::add(ops::upsample_nearest(d2, 2), e1));
  return ops::conv2d(d1, s.head_w, s.head_b);
}

template <typename T>
std::uint64_t output_hash(const Tensor<T>& t) {
  Tensor<double> rounded(t.shape());
  auto r = rounded.mutable_data();
  for (std::size_t i = 0; i < t.numel(); ++i) r[i] = std::round(static_cast<double>(t[i]) * 1e6);
  return ssam::checksum(rounded);
}

#define SSAM_BACKBONE(T)                                                                                      \
  template struct BlockParams<T>;                                                                             \
  template struct FrozenEncoder<T>;                                                                           \
  template FrozenEncoder<T> init_frozen_backbone<T>(std::uint64_t, const EncoderConfig&);                     \
  template Tensor<T> patch_embed<T>(const FrozenEncoder<T>&, const Tensor<T>&);                               \
  template Tensor<T> block_forward<T>(const BlockParams<T>&, const Tensor<T>&, std::size_t);                  \
  template Tensor<T> tokens_to_grid<T>(const Tensor<T>&);                                                     \
  template Tensor<T> grid_to_tokens<T>(const Tensor<T>&);                                                     \
  template Tensor<T> run_blocks<T>(const FrozenEncoder<T>&, Tensor<T>, std::size_t, std::size_t,              \
                                   std::type_identity_t<const moe::AdapterState<T>*>,                         \
                                   std::type_identity_t<std::vector<moe::RoutingRecord<T>>*>);                \
  template EncoderOutput<T> encoder_forward<T>(const FrozenEncoder<T>&, const Tensor<T>&,                     \
                                               std::type_identity_t<const moe::AdapterState<T>*>);            \
  template struct MaskDecoder<T>;                                                                             \
  template Tensor<T> decode_mask<T>(const Tensor<T>&, const MaskDecoder<T>&);                                 \
  template struct StudentModel<T>;                                                                            \
  template Tensor<T> student_forward<T>(const StudentModel<T>&, const Tensor<T>&);                            \
  template std::uint64_t output_hash<T>(const Tensor<T>&);

SSAM_INSTANTIATE_BOTH(SSAM_BACKBONE)

}  // namespace ssam::backbone
