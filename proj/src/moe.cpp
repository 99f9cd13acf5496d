#include "ssam/moe.hpp"

#include <algorithm>
#include <cctype>

#include "ops_detail.hpp"

namespace ssam::moe {

std::string expert_name(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::Pimdo: return "pimdo";
    case ExpertKind::Spd: return "spd";
    case ExpertKind::Hplsm: return "hplsm";
    case ExpertKind::Tgds: return "tgds";
  }
  throw ContractError("expert_name: unknown kind");
}

ExpertKind parse_expert(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (s == "pimdo" || s == "pi") return ExpertKind::Pimdo;
  if (s == "spd") return ExpertKind::Spd;
  if (s == "hplsm" || s == "hp") return ExpertKind::Hplsm;
  if (s == "tgds" || s == "tg") return ExpertKind::Tgds;
  throw ConfigError("unknown expert '" + name + "'");
}

template <typename T>
RouterParams<T> RouterParams<T>::init(std::size_t channels, std::size_t experts, Rng& rng, std::size_t hidden) {
  RouterParams r;
  r.w1 = normal_param<T>({hidden, channels}, rng, fan_in_std(channels));
  r.b1 = constant_param<T>({hidden}, T(0));
  r.w2 = normal_param<T>({experts, hidden}, rng, 0.1 * fan_in_std(hidden));
  r.b2 = constant_param<T>({experts}, T(0));
  return r;
}

template <typename T>
void RouterParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "w1", w1});
  out.push_back({prefix + "b1", b1});
  out.push_back({prefix + "w2", w2});
  out.push_back({prefix + "b2", b2});
}

template <typename T>
Tensor<T> route_weights(const Tensor<T>& x, const RouterParams<T>& r) {
  if (!x.defined() || x.rank() != 4) throw DimensionError("route_weights: expected (N, C, h, w)");
  if (r.w1.dim(1) != x.dim(1)) {
    throw ConfigError("route_weights: router expects " + std::to_string(r.w1.dim(1)) + " channels, got " +
                      std::to_string(x.dim(1)));
  }
  auto h = ops::relu(ops::linear(ops::global_avg_pool(x), r.w1, r.b1));
  return ops::softmax_stable(ops::linear(h, r.w2, r.b2), 1);
}

template <typename T>
ExpertSet<T> ExpertSet<T>::init(std::size_t channels, const std::vector<ExpertKind>& kinds, Rng& rng) {
  if (kinds.empty()) throw ContractError("ExpertSet: at least one expert is required");
  ExpertSet s;
  s.kinds = kinds;
  // all four experts always draw from rng, subset or not
  s.pimdo = experts::PimdoParams<T>::init(rng);
  s.spd = experts::SpdParams<T>::init(channels, rng);
  s.hplsm = experts::HplsmParams<T>::init(channels, rng);
  s.tgds = experts::TgdsParams<T>::init(channels, rng);
  for (ExpertKind k : kinds) s.gains[k] = constant_param<T>({channels}, T(0));
  return s;
}

template <typename T>
void ExpertSet<T>::collect(const std::string& layer_prefix, ParamList<T>& out) const {
  for (ExpertKind k : kinds) {
    const std::string prefix = layer_prefix + "expert" + expert_name(k) + ".";
    switch (k) {
      case ExpertKind::Pimdo: pimdo.collect(prefix, out); break;
      case ExpertKind::Spd: spd.collect(prefix, out); break;
      case ExpertKind::Hplsm: hplsm.collect(prefix, out); break;
      case ExpertKind::Tgds: tgds.collect(prefix, out); break;
    }
    out.push_back({prefix + "gain", gains.at(k)});
  }
}

template <typename T>
Tensor<T> expert_output(ExpertKind kind, const Tensor<T>& x, const ExpertSet<T>& set) {
  Tensor<T> y;
  switch (kind) {
    case ExpertKind::Pimdo: y = experts::pimdo_forward(x, set.pimdo); break;
    case ExpertKind::Spd: y = experts::spd_forward(x, set.spd); break;
    case ExpertKind::Hplsm: y = experts::hplsm_forward(x, set.hplsm); break;
    case ExpertKind::Tgds: y = experts::tgds_forward(x, set.tgds).y; break;
  }
  return ops::scale_channels(y, set.gains.at(kind));
}

template <typename T>
Tensor<T> fuse_outputs(const std::vector<Tensor<T>>& outputs, const Tensor<T>& w) {
  if (outputs.empty()) throw ContractError("fuse_outputs: no expert outputs");
  for (const auto& o : outputs) {
    if (o.shape() != outputs.front().shape()) {
      throw ContractError("fuse_outputs: expert output shape " + shape_string(o.shape()) + " differs from " +
                          shape_string(outputs.front().shape()));
    }
  }
  if (w.rank() != 2 || w.dim(1) != outputs.size() || w.dim(0) != outputs.front().dim(0)) {
    throw DimensionError("fuse_outputs: weights must be (N, K)");
  }
  return ops::mix<T>(outputs, w);
}

template <typename T>
Tensor<T> fuse_experts(const Tensor<T>& x, const Tensor<T>& w, const ExpertSet<T>& set) {
  std::vector<Tensor<T>> outputs;
  outputs.reserve(set.kinds.size());
  for (ExpertKind k : set.kinds) outputs.push_back(expert_output(k, x, set));
  return fuse_outputs(outputs, w);
}

template <typename T>
AdapterState<T> AdapterState<T>::init(std::size_t channels, const std::vector<std::size_t>& injected,
                                      const std::vector<ExpertKind>& kinds, Rng& rng) {
  AdapterState a;
  a.injected_layers = injected;
  std::sort(a.injected_layers.begin(), a.injected_layers.end());
  a.injected_layers.erase(std::unique(a.injected_layers.begin(), a.injected_layers.end()), a.injected_layers.end());
  for (std::size_t l : a.injected_layers) {
    if (l == 0) throw ConfigError("AdapterState: layers are numbered from 1");
    LayerAdapter<T> la;
    la.router = RouterParams<T>::init(channels, kinds.size(), rng);
    la.experts = ExpertSet<T>::init(channels, kinds, rng);
    a.layers.emplace(l, std::move(la));
  }
  return a;
}

template <typename T>
std::size_t AdapterState<T>::expert_count() const {
  return layers.empty() ? 0 : layers.begin()->second.experts.kinds.size();
}

template <typename T>
void AdapterState<T>::collect(ParamList<T>& out) const {
  for (const auto& [l, la] : layers) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    la.router.collect(prefix + "router.", out);
    la.experts.collect(prefix, out);
  }
}

template <typename T>
AdapterResult<T> adapter_apply(const Tensor<T>& block_out, const Tensor<T>& x_in, std::size_t layer,
                               const AdapterState<T>& a) {
  auto it = a.layers.find(layer);
  if (it == a.layers.end()) throw ContractError("adapter_apply: layer " + std::to_string(layer) + " is not injected");
  if (block_out.shape() != x_in.shape()) throw DimensionError("adapter_apply: block output and input shapes differ");
  auto w = route_weights(x_in, it->second.router);
  auto fused = fuse_experts(x_in, w, it->second.experts);
  return {ops::add(block_out, fused), {w}};
}

template <typename T>
RoutingStats<T> accumulate_routing_stats(const std::vector<RoutingRecord<T>>& records) {
  if (records.empty()) throw ContractError("accumulate_routing_stats: no routing records");
  const std::size_t k = records.front().weights.dim(1);
  std::size_t total = 0;
  for (const auto& r : records) {
    if (r.weights.rank() != 2 || r.weights.dim(1) != k) throw DimensionError("accumulate_routing_stats: K mismatch");
    total += r.weights.dim(0);
  }
  if (total == 0) throw ContractError("accumulate_routing_stats: no samples");
  Tensor<T> f({k});
  Tensor<T> p;
  for (const auto& r : records) {
    const std::size_t n = r.weights.dim(0);
    const auto w = r.weights.data();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = w.subspan(i * k, k);
      const std::size_t best = std::max_element(row.begin(), row.end()) - row.begin();
      f.mutable_data()[best] += T(1);
    }
    auto part = ops::scale(ops::mean_rows(r.weights), T(n) / T(total));
    p = p.defined() ? ops::add(p, part) : part;
  }
  for (T& v : f.mutable_data()) v /= T(total);
  return {f, p};
}

#define SSAM_MOE(T)                                                                                          \
  template struct RouterParams<T>;                                                                           \
  template Tensor<T> route_weights<T>(const Tensor<T>&, const RouterParams<T>&);                             \
  template struct ExpertSet<T>;                                                                              \
  template Tensor<T> expert_output<T>(ExpertKind, const Tensor<T>&, const ExpertSet<T>&);                    \
  template Tensor<T> fuse_outputs<T>(const std::vector<Tensor<T>>&, const Tensor<T>&);                       \
  template Tensor<T> fuse_experts<T>(const Tensor<T>&, const Tensor<T>&, const ExpertSet<T>&);               \
  template struct AdapterState<T>;                                                                           \
  template AdapterResult<T> adapter_apply<T>(const Tensor<T>&, const Tensor<T>&, std::size_t,                \
                                             const AdapterState<T>&);                                        \
  template RoutingStats<T> accumulate_routing_stats<T>(const std::vector<RoutingRecord<T>>&);

SSAM_INSTANTIATE_BOTH(SSAM_MOE)

}  // namespace ssam::moe
