#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssam/experts.hpp"

// Routed mixture of the four experts, injected residually after selected
// transformer blocks. Layers are numbered from 1.
namespace ssam::moe {

enum class ExpertKind { Pimdo, Spd, Hplsm, Tgds };

inline const std::vector<ExpertKind>& all_experts() {
  static const std::vector<ExpertKind> kinds{ExpertKind::Pimdo, ExpertKind::Spd, ExpertKind::Hplsm,
                                             ExpertKind::Tgds};
  return kinds;
}

/// "pimdo", "spd", "hplsm", "tgds".
std::string expert_name(ExpertKind kind);
/// Accepts the names above or the short forms PI, SPD, HP, TG (any case).
ExpertKind parse_expert(const std::string& name);

template <typename T>
struct RouterParams {
  Tensor<T> w1;  // (hidden, C)
  Tensor<T> b1;
  Tensor<T> w2;  // (K, hidden)
  Tensor<T> b2;

  static RouterParams init(std::size_t channels, std::size_t experts, Rng& rng, std::size_t hidden = 16);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// softmax(W2 relu(W1 GAP(x) + b1) + b2), shape (N, K).
template <typename T>
Tensor<T> route_weights(const Tensor<T>& x, const RouterParams<T>& r);

/// The experts of one injected layer. Each expert output is multiplied by a
/// per-channel gain (`gains`, zero at init). At init the adapter adds nothing.
template <typename T>
struct ExpertSet {
  std::vector<ExpertKind> kinds;
  experts::PimdoParams<T> pimdo;
  experts::SpdParams<T> spd;
  experts::HplsmParams<T> hplsm;
  experts::TgdsParams<T> tgds;
  std::map<ExpertKind, Tensor<T>> gains;  // each (C)

  static ExpertSet init(std::size_t channels, const std::vector<ExpertKind>& kinds, Rng& rng);
  void collect(const std::string& layer_prefix, ParamList<T>& out) const;
};

/// Gain-scaled output of one expert.
template <typename T>
Tensor<T> expert_output(ExpertKind kind, const Tensor<T>& x, const ExpertSet<T>& set);

/// sum_i w[:, i] * outputs[i]. Throws ContractError when an output shape
/// differs from the first.
template <typename T>
Tensor<T> fuse_outputs(const std::vector<Tensor<T>>& outputs, const Tensor<T>& w);

template <typename T>
Tensor<T> fuse_experts(const Tensor<T>& x, const Tensor<T>& w, const ExpertSet<T>& set);

template <typename T>
struct RoutingRecord {
  Tensor<T> weights;  // (N, K)
};

template <typename T>
struct LayerAdapter {
  RouterParams<T> router;
  ExpertSet<T> experts;
};

template <typename T>
struct AdapterState {
  std::vector<std::size_t> injected_layers;  // ascending, 1-based
  std::map<std::size_t, LayerAdapter<T>> layers;

  static AdapterState init(std::size_t channels, const std::vector<std::size_t>& injected,
                           const std::vector<ExpertKind>& kinds, Rng& rng);
  bool injects(std::size_t layer) const { return layers.count(layer) != 0; }
  std::size_t expert_count() const;
  /// Names follow "layer{l}.router.*" and "layer{l}.expert{name}.*".
  void collect(ParamList<T>& out) const;
};

template <typename T>
struct AdapterResult {
  Tensor<T> out;
  RoutingRecord<T> record;
};

/// block_out + fuse_experts(x_in, route_weights(x_in)). Throws ContractError
/// when `layer` is not injected.
template <typename T>
AdapterResult<T> adapter_apply(const Tensor<T>& block_out, const Tensor<T>& x_in, std::size_t layer,
                               const AdapterState<T>& a);

/// f: share of samples whose largest weight is expert i (ties to the lowest
/// index), constant. P: mean weight of expert i, differentiable.
template <typename T>
struct RoutingStats {
  Tensor<T> f;
  Tensor<T> P;
};

template <typename T>
RoutingStats<T> accumulate_routing_stats(const std::vector<RoutingRecord<T>>& records);

}  // namespace ssam::moe
