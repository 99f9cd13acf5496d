#include "ssam/experts.hpp"

#include "ops_detail.hpp"

namespace ssam::experts {

namespace {

template <typename T>
Tensor<T> depthwise_kernel(std::size_t channels, const T (&k)[9]) {
  Tensor<T> out({channels, 1, 3, 3});
  auto d = out.mutable_data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < 9; ++i) d[c * 9 + i] = k[i];
  return out;
}

template <typename T>
void require_feature_map(const Tensor<T>& x, const char* op) {
  if (!x.defined() || x.rank() != 4) throw DimensionError(std::string(op) + ": expected (N, C, h, w)");
}

template <typename T>
void fill(Tensor<T>& t, T v) {
  for (T& x : t.mutable_data()) x = v;
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> sobel_gradients(const Tensor<T>& x) {
  require_feature_map(x, "sobel_gradients");
  if (x.dim(2) < 3 || x.dim(3) < 3) throw DimensionError("sobel_gradients: image smaller than 3x3");
  static constexpr T kx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static constexpr T ky[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  const std::size_t c = x.dim(1);
  auto gx = ops::conv2d(x, depthwise_kernel<T>(c, kx), {}, c, ops::Padding::Reflect);
  auto gy = ops::conv2d(x, depthwise_kernel<T>(c, ky), {}, c, ops::Padding::Reflect);
  return {gx, gy};
}

// ---- PIMDO ----

template <typename T>
PimdoParams<T> PimdoParams<T>::init(Rng& rng, std::size_t hidden) {
  PimdoParams p;
  p.ctrl_w1 = normal_param<T>({hidden, 1}, rng, 1.0);
  p.ctrl_b1 = normal_param<T>({hidden}, rng, 0.1);
  p.ctrl_w2 = normal_param<T>({1, hidden}, rng, fan_in_std(hidden));
  p.ctrl_b2 = constant_param<T>({1}, T(0));
  return p;
}

template <typename T>
void PimdoParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "w1", ctrl_w1});
  out.push_back({prefix + "b1", ctrl_b1});
  out.push_back({prefix + "w2", ctrl_w2});
  out.push_back({prefix + "b2", ctrl_b2});
}

template <typename T>
void PimdoParams<T>::force_conductance(bool open) {
  fill(ctrl_w2, T(0));
  fill(ctrl_b2, open ? T(800) : T(-800));
}

template <typename T>
Tensor<T> pimdo_conductance(const Tensor<T>& magnitude, const PimdoParams<T>& p) {
  auto flat = ops::reshape(magnitude, {magnitude.numel(), 1});
  auto h = ops::relu(ops::linear(flat, p.ctrl_w1, p.ctrl_b1));
  auto c = ops::sigmoid(ops::linear(h, p.ctrl_w2, p.ctrl_b2));
  return ops::reshape(c, magnitude.shape());
}

template <typename T>
Tensor<T> pimdo_forward(const Tensor<T>& x, const PimdoParams<T>& p) {
  require_feature_map(x, "pimdo_forward");
  if (!(p.dt > T(0) && p.dt <= T(0.25))) {
    throw ConfigError("pimdo_forward: dt must lie in (0, 0.25], got " + std::to_string(double(p.dt)));
  }
  Tensor<T> cur = x;
  for (std::size_t t = 0; t < p.steps; ++t) {
    auto [gx, gy] = sobel_gradients(cur);
    auto mag = ops::sqrt_eps(ops::add(ops::square(gx), ops::square(gy)), T(1e-6));
    cur = ops::diffusion_step(cur, pimdo_conductance(mag, p), p.dt);
  }
  return cur;
}

// ---- SPD ----

template <typename T>
SpdParams<T> SpdParams<T>::init(std::size_t channels, Rng& rng) {
  static constexpr double lo[3] = {0.25, 0.5, 0.25};
  static constexpr double hi[3] = {-0.25, 0.5, -0.25};
  const double* rows[kSubbands] = {lo, lo, hi, hi};
  const double* cols[kSubbands] = {lo, hi, lo, hi};
  SpdParams p;
  p.analysis = Tensor<T>({kSubbands * channels, 1, 3, 3});
  auto a = p.analysis.mutable_data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t j = 0; j < kSubbands; ++j)
      for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t v = 0; v < 3; ++v) a[((c * kSubbands + j) * 3 + u) * 3 + v] = T(rows[j][u] * cols[j][v]);
  p.analysis.set_requires_grad(true);
  p.synthesis = Tensor<T>({channels, kSubbands, 3, 3});
  auto s = p.synthesis.mutable_data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t j = 0; j < kSubbands; ++j) s[(c * kSubbands + j) * 9 + 4] = T(1);
  p.synthesis.set_requires_grad(true);
  const std::size_t hidden = 4 * kSubbands;
  p.att_w1 = normal_param<T>({hidden, kSubbands}, rng, fan_in_std(kSubbands));
  p.att_b1 = constant_param<T>({hidden}, T(0));
  p.att_w2 = normal_param<T>({kSubbands, hidden}, rng, fan_in_std(hidden));
  p.att_b2 = constant_param<T>({kSubbands}, T(0));
  return p;
}

template <typename T>
void SpdParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "analysis", analysis});
  out.push_back({prefix + "synthesis", synthesis});
  out.push_back({prefix + "att_w1", att_w1});
  out.push_back({prefix + "att_b1", att_b1});
  out.push_back({prefix + "att_w2", att_w2});
  out.push_back({prefix + "att_b2", att_b2});
}

template <typename T>
void SpdParams<T>::force_gates(bool open) {
  fill(att_w2, T(0));
  fill(att_b2, open ? T(800) : T(-800));
}

template <typename T>
Tensor<T> spd_analyze(const Tensor<T>& x, const SpdParams<T>& p) {
  require_feature_map(x, "spd_analyze");
  const std::size_t c = x.dim(1);
  if (p.analysis.rank() != 4 || p.analysis.dim(0) % c != 0) throw DimensionError("spd_analyze: channel count mismatch");
  if (p.analysis.dim(0) / c != kSubbands || p.synthesis.dim(1) != kSubbands) {
    throw ConfigError("spd_analyze: filter bank must have exactly 4 sub-bands");
  }
  return ops::conv2d(x, p.analysis, {}, c);
}

template <typename T>
Tensor<T> spd_gates(const Tensor<T>& subbands, const SpdParams<T>& p) {
  const std::size_t n = subbands.dim(0), c4 = subbands.dim(1);
  auto pooled = ops::reshape(ops::global_avg_pool(subbands), {n * c4 / kSubbands, kSubbands});
  auto h = ops::relu(ops::linear(pooled, p.att_w1, p.att_b1));
  auto g = ops::sigmoid(ops::linear(h, p.att_w2, p.att_b2));
  return ops::reshape(g, {n, c4});
}

template <typename T>
Tensor<T> spd_synthesize(const Tensor<T>& subbands, const Tensor<T>& gates, const SpdParams<T>& p) {
  const std::size_t c = subbands.dim(1) / kSubbands;
  return ops::conv2d(ops::mul_nc(subbands, gates), p.synthesis, {}, c);
}

template <typename T>
Tensor<T> spd_forward(const Tensor<T>& x, const SpdParams<T>& p) {
  auto z = spd_analyze(x, p);
  return spd_synthesize(z, spd_gates(z, p), p);
}

// ---- HPLSM ----

template <typename T>
HplsmParams<T> HplsmParams<T>::init(std::size_t channels, Rng& rng, std::size_t hidden) {
  HplsmParams p;
  const std::size_t c = channels;
  p.base_w = normal_param<T>({c, c, 3, 3}, rng, fan_in_std(9 * c));
  p.base_b = constant_param<T>({c}, T(0));
  p.hyp_w1 = normal_param<T>({hidden, c, 3, 3}, rng, fan_in_std(9 * c));
  p.hyp_b1 = constant_param<T>({hidden}, T(0));
  p.hyp_w2 = normal_param<T>({2 * c, hidden, 3, 3}, rng, 0.1 * fan_in_std(9 * hidden));
  p.hyp_b2 = constant_param<T>({2 * c}, T(0));
  p.fc_w = normal_param<T>({2 * c, 2 * c}, rng, 0.1 * fan_in_std(2 * c));
  p.fc_b = constant_param<T>({2 * c}, T(0));
  for (std::size_t i = 0; i < c; ++i) p.fc_b.mutable_data()[i] = T(1);
  return p;
}

template <typename T>
void HplsmParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "base_w", base_w});
  out.push_back({prefix + "base_b", base_b});
  out.push_back({prefix + "hyp_w1", hyp_w1});
  out.push_back({prefix + "hyp_b1", hyp_b1});
  out.push_back({prefix + "hyp_w2", hyp_w2});
  out.push_back({prefix + "hyp_b2", hyp_b2});
  out.push_back({prefix + "fc_w", fc_w});
  out.push_back({prefix + "fc_b", fc_b});
}

template <typename T>
void HplsmParams<T>::force_modulation(T gamma, T beta) {
  fill(hyp_w2, T(0));
  fill(hyp_b2, T(0));
  fill(fc_w, T(0));
  const std::size_t c = fc_b.numel() / 2;
  auto b = fc_b.mutable_data();
  for (std::size_t i = 0; i < c; ++i) {
    b[i] = gamma;
    b[c + i] = beta;
  }
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> hplsm_modulation(const Tensor<T>& x, const HplsmParams<T>& p) {
  require_feature_map(x, "hplsm_modulation");
  const std::size_t c = x.dim(1);
  auto h1 = ops::relu(ops::conv2d(x, p.hyp_w1, p.hyp_b1));
  auto maps = ops::conv2d(h1, p.hyp_w2, p.hyp_b2);
  auto global = ops::linear(ops::global_avg_pool(maps), p.fc_w, p.fc_b);
  auto full = ops::add_nc(maps, global);
  return {ops::slice_channels(full, 0, c), ops::slice_channels(full, c, c)};
}

template <typename T>
Tensor<T> hplsm_forward(const Tensor<T>& x, const HplsmParams<T>& p) {
  auto base = ops::conv2d(x, p.base_w, p.base_b);
  auto [gamma, beta] = hplsm_modulation(x, p);
  return ops::add(ops::mul(gamma, base), beta);
}

// ---- TGDS ----

template <typename T>
TgdsParams<T> TgdsParams<T>::init(std::size_t channels, Rng& rng) {
  TgdsParams p;
  p.off_w = constant_param<T>({2 * kTaps, channels, 3, 3}, T(0));
  p.off_b = constant_param<T>({2 * kTaps}, T(0));
  p.agg_w = normal_param<T>({channels, kTaps}, rng, fan_in_std(kTaps));
  return p;
}

template <typename T>
void TgdsParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "off_w", off_w});
  out.push_back({prefix + "off_b", off_b});
  out.push_back({prefix + "agg_w", agg_w});
}

template <typename T>
Tensor<T> tgds_offsets(const Tensor<T>& x, const TgdsParams<T>& p) {
  require_feature_map(x, "tgds_offsets");
  return ops::scale(ops::tanh(ops::conv2d(x, p.off_w, p.off_b)), T(2));
}

template <typename T>
TgdsOutput<T> tgds_forward(const Tensor<T>& x, const TgdsParams<T>& p) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto coords = ops::offsets_to_coords(tgds_offsets(x, p), 3);
  auto samples = ops::reshape(ops::bilinear_sample(x, coords), {n, c, kTaps, h * w});
  auto y = ops::reshape(ops::tap_sum(samples, p.agg_w), {n, c, h, w});
  return {y, coords};
}

#define SSAM_EXPERTS(T)                                                                       \
  template std::pair<Tensor<T>, Tensor<T>> sobel_gradients<T>(const Tensor<T>&);              \
  template struct PimdoParams<T>;                                                             \
  template Tensor<T> pimdo_conductance<T>(const Tensor<T>&, const PimdoParams<T>&);           \
  template Tensor<T> pimdo_forward<T>(const Tensor<T>&, const PimdoParams<T>&);               \
  template struct SpdParams<T>;                                                               \
  template Tensor<T> spd_analyze<T>(const Tensor<T>&, const SpdParams<T>&);                   \
  template Tensor<T> spd_gates<T>(const Tensor<T>&, const SpdParams<T>&);                     \
  template Tensor<T> spd_synthesize<T>(const Tensor<T>&, const Tensor<T>&, const SpdParams<T>&); \
  template Tensor<T> spd_forward<T>(const Tensor<T>&, const SpdParams<T>&);                   \
  template struct HplsmParams<T>;                                                             \
  template std::pair<Tensor<T>, Tensor<T>> hplsm_modulation<T>(const Tensor<T>&, const HplsmParams<T>&); \
  template Tensor<T> hplsm_forward<T>(const Tensor<T>&, const HplsmParams<T>&);               \
  template struct TgdsParams<T>;                                                              \
  template Tensor<T> tgds_offsets<T>(const Tensor<T>&, const TgdsParams<T>&);                 \
  template TgdsOutput<T> tgds_forward<T>(const Tensor<T>&, const TgdsParams<T>&);

SSAM_INSTANTIATE_BOTH(SSAM_EXPERTS)

}  // namespace ssam::experts
