#include <gtest/gtest.h>

#include <cmath>

#include "ssam/moe.hpp"
#include "test_support.hpp"

using namespace ssam;
using namespace ssam::moe;
using ssam::testing::check_op_gradients;
using ssam::testing::random_tensor;

namespace {

void make_identity(ExpertSet<double>& s) {
  s.pimdo.force_conductance(false);
  s.spd.force_gates(true);
  s.hplsm.force_modulation(1.0, 0.0);
  const std::size_t c = s.hplsm.base_w.dim(0);
  for (double& v : s.hplsm.base_w.mutable_data()) v = 0;
  for (double& v : s.hplsm.base_b.mutable_data()) v = 0;
  for (std::size_t i = 0; i < c; ++i) s.hplsm.base_w.mutable_data()[(i * c + i) * 9 + 4] = 1.0;
  for (double& v : s.tgds.agg_w.mutable_data()) v = 0;
  for (std::size_t i = 0; i < c; ++i) s.tgds.agg_w.mutable_data()[i * 9 + 4] = 1.0;
  for (auto& [k, g] : s.gains)
    for (double& v : g.mutable_data()) v = 1.0;
}

void randomize_gains(ExpertSet<double>& s, std::mt19937_64& r) {
  for (auto& [k, g] : s.gains)
    for (double& v : g.mutable_data()) v = std::uniform_real_distribution<double>(0.5, 1.5)(r);
}

}  // namespace

TEST(Router, ZeroOutputLayerIsUniform) {
  Rng rng(1);
  auto r = RouterParams<double>::init(4, 4, rng);
  for (double& v : r.w2.mutable_data()) v = 0;
  std::mt19937_64 g(2);
  auto w = route_weights(random_tensor({3, 4, 5, 5}, g), r);
  for (double v : w.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Router, BiasOnlyMatchesDirectSoftmax) {
  Rng rng(3);
  auto r = RouterParams<double>::init(4, 4, rng);
  for (double& v : r.w2.mutable_data()) v = 0;
  r.b2.mutable_data()[0] = 10.0;
  std::mt19937_64 g(4);
  auto w = route_weights(random_tensor({2, 4, 5, 5}, g), r);
  const double e = std::exp(10.0), z = e + 3.0;
  EXPECT_NEAR(w[0], e / z, 1e-15);
  EXPECT_NEAR(w[0], 0.99986, 1e-5);
  EXPECT_NEAR(w[1], 1.0 / z, 1e-15);
}

TEST(Router, DeterministicAndOnSimplex) {
  Rng rng(5);
  auto r = RouterParams<double>::init(4, 4, rng);
  std::mt19937_64 g(6);
  for (int t = 0; t < 200; ++t) {
    auto x = random_tensor({1, 4, 4, 4}, g, -5, 5);
    auto a = route_weights(x, r), b = route_weights(x, r);
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(a[k], b[k]);
      EXPECT_GE(a[k], 0.0);
      s += a[k];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Router, ChannelMismatchIsConfigError) {
  Rng rng(7);
  auto r = RouterParams<double>::init(4, 4, rng);
  Tensor<double> x({1, 3, 4, 4});
  EXPECT_THROW(route_weights(x, r), ConfigError);
}

TEST(Fuse, OneHotSelectsExpert) {
  Rng rng(8);
  auto s = ExpertSet<double>::init(4, all_experts(), rng);
  std::mt19937_64 g(9);
  randomize_gains(s, g);
  auto x = random_tensor({1, 4, 6, 6}, g);
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor<double> w({1, 4});
    w.mutable_data()[i] = 1.0;
    auto y = fuse_experts(x, w, s);
    auto e = expert_output(all_experts()[i], x, s);
    for (std::size_t j = 0; j < y.numel(); ++j) ASSERT_EQ(y[j], e[j]);
  }
}

TEST(Fuse, UniformOverIdentityExpertsIsIdentity) {
  Rng rng(10);
  auto s = ExpertSet<double>::init(3, all_experts(), rng);
  make_identity(s);
  std::mt19937_64 g(11);
  auto x = random_tensor({2, 3, 6, 6}, g);
  Tensor<double> w({2, 4}, 0.25);
  auto y = fuse_experts(x, w, s);
  for (std::size_t j = 0; j < y.numel(); ++j) EXPECT_NEAR(y[j], x[j], 1e-12);
}

TEST(Fuse, MatchesIndependentAccumulation) {
  std::mt19937_64 g(12);
  std::vector<Tensor<double>> outs;
  for (int i = 0; i < 4; ++i) outs.push_back(random_tensor({3, 2, 4, 4}, g));
  auto w = random_tensor({3, 4}, g, 0, 1);
  auto y = fuse_outputs(outs, w);
  const std::size_t per = 2 * 16;
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < per; ++j) {
      long double acc = 0;
      for (std::size_t i = 0; i < 4; ++i) acc += (long double)w[n * 4 + i] * outs[i][n * per + j];
      EXPECT_NEAR(y[n * per + j], double(acc), 1e-12);
    }
}

TEST(Fuse, LinearInWeights) {
  std::mt19937_64 g(13);
  std::vector<Tensor<double>> outs;
  for (int i = 0; i < 4; ++i) outs.push_back(random_tensor({2, 2, 3, 3}, g));
  auto w1 = random_tensor({2, 4}, g, 0, 1), w2 = random_tensor({2, 4}, g, 0, 1);
  const double alpha = 0.3;
  Tensor<double> wm({2, 4});
  for (std::size_t i = 0; i < 8; ++i) wm.mutable_data()[i] = alpha * w1[i] + (1 - alpha) * w2[i];
  auto a = fuse_outputs(outs, wm), b = fuse_outputs(outs, w1), c = fuse_outputs(outs, w2);
  for (std::size_t j = 0; j < a.numel(); ++j) EXPECT_NEAR(a[j], alpha * b[j] + (1 - alpha) * c[j], 1e-9);
}

TEST(Fuse, ShapeMismatchIsContractError) {
  std::vector<Tensor<double>> outs{Tensor<double>({1, 2, 3, 3}), Tensor<double>({1, 2, 4, 4})};
  Tensor<double> w({1, 2}, 0.5);
  EXPECT_THROW(fuse_outputs(outs, w), ContractError);
}

TEST(Adapter, ZeroGainsLeaveBlockOutput) {
  Rng rng(14);
  auto a = AdapterState<double>::init(4, {3, 4}, all_experts(), rng);
  std::mt19937_64 g(15);
  auto block = random_tensor({2, 4, 4, 4}, g), x = random_tensor({2, 4, 4, 4}, g);
  auto res = adapter_apply(block, x, 4, a);
  for (std::size_t j = 0; j < block.numel(); ++j) EXPECT_EQ(res.out[j], block[j]);
}

TEST(Adapter, SingleExpertOneHotRouter) {
  Rng rng(16);
  auto a = AdapterState<double>::init(4, {3}, {ExpertKind::Hplsm}, rng);
  std::mt19937_64 g(17);
  auto& layer = a.layers.at(3);
  randomize_gains(layer.experts, g);
  auto block = random_tensor({2, 4, 4, 4}, g), x = random_tensor({2, 4, 4, 4}, g);
  auto res = adapter_apply(block, x, 3, a);
  auto e = expert_output(ExpertKind::Hplsm, x, layer.experts);
  for (double v : res.record.weights.data()) EXPECT_EQ(v, 1.0);
  for (std::size_t j = 0; j < block.numel(); ++j) EXPECT_NEAR(res.out[j], block[j] + e[j], 1e-15);
}

TEST(Adapter, ComposesRouterAndFusion) {
  Rng rng(18);
  auto a = AdapterState<double>::init(4, {3, 4}, all_experts(), rng);
  std::mt19937_64 g(19);
  randomize_gains(a.layers.at(4).experts, g);
  auto block = random_tensor({2, 4, 4, 4}, g), x = random_tensor({2, 4, 4, 4}, g);
  auto res = adapter_apply(block, x, 4, a);
  auto w = route_weights(x, a.layers.at(4).router);
  auto fused = fuse_experts(x, w, a.layers.at(4).experts);
  for (std::size_t j = 0; j < block.numel(); ++j) EXPECT_NEAR(res.out[j], block[j] + fused[j], 1e-12);
}

TEST(Adapter, UninjectedLayerIsContractError) {
  Rng rng(20);
  auto a = AdapterState<double>::init(4, {3, 4}, all_experts(), rng);
  Tensor<double> x({1, 4, 4, 4});
  EXPECT_THROW(adapter_apply(x, x, 2, a), ContractError);
}

TEST(Adapter, ParameterNamesAreLayerScoped) {
  Rng rng(21);
  auto a = AdapterState<double>::init(4, {3, 4}, all_experts(), rng);
  ParamList<double> params;
  a.collect(params);
  bool router = false, pimdo = false;
  for (const auto& p : params) {
    router |= p.name == "layer3.router.w2";
    pimdo |= p.name == "layer4.expertpimdo.w1";
  }
  EXPECT_TRUE(router);
  EXPECT_TRUE(pimdo);
}

TEST(Adapter, RouterReceivesGradient) {
  Rng rng(22);
  auto a = AdapterState<double>::init(4, {3}, all_experts(), rng);
  std::mt19937_64 g(23);
  randomize_gains(a.layers.at(3).experts, g);
  auto x = random_tensor({2, 4, 4, 4}, g);
  Graph<double> graph;
  auto rec = graph.record();
  auto res = adapter_apply(x, x, 3, a);
  backward(graph, ops::sum(ops::square(res.out)));
  double norm = 0;
  for (double v : a.layers.at(3).router.w2.grad()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(RoutingStats, UniformTiesGoToFirstExpert) {
  Tensor<double> w({3, 4}, 0.25);
  auto s = accumulate_routing_stats<double>({{w}});
  EXPECT_EQ(s.f[0], 1.0);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(s.f[i], 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s.P[i], 0.25);
}

TEST(RoutingStats, OneHotOnSecond) {
  Tensor<double> w({2, 4}, std::vector<double>{0, 1, 0, 0, 0, 1, 0, 0});
  auto s = accumulate_routing_stats<double>({{w}});
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.f[i], i == 1 ? 1.0 : 0.0);
    EXPECT_EQ(s.P[i], i == 1 ? 1.0 : 0.0);
  }
}

TEST(RoutingStats, HandEnumeratedBatch) {
  // argmax: 0, 2, 2, 1 -> f = [1/4, 1/4, 2/4, 0]
  Tensor<double> a({2, 4}, std::vector<double>{0.7, 0.1, 0.1, 0.1, 0.2, 0.2, 0.5, 0.1});
  Tensor<double> b({2, 4}, std::vector<double>{0.1, 0.3, 0.4, 0.2, 0.3, 0.4, 0.2, 0.1});
  auto s = accumulate_routing_stats<double>({{a}, {b}});
  const double f[4] = {0.25, 0.25, 0.5, 0.0};
  const double p[4] = {1.3 / 4, 1.0 / 4, 1.2 / 4, 0.5 / 4};
  double sf = 0, sp = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(s.f[i], f[i]);
    EXPECT_NEAR(s.P[i], p[i], 1e-15);
    sf += s.f[i];
    sp += s.P[i];
  }
  EXPECT_NEAR(sf, 1.0, 1e-6);
  EXPECT_NEAR(sp, 1.0, 1e-6);
}

TEST(RoutingStats, EmptyIsContractError) {
  EXPECT_THROW(accumulate_routing_stats<double>({}), ContractError);
}

class RouterGradients : public ::testing::TestWithParam<int> {};

TEST_P(RouterGradients, MatchFiniteDifferences) {
  Rng rng(GetParam());
  auto r = RouterParams<double>::init(4, 4, rng);
  std::mt19937_64 g(GetParam() + 90);
  r.w2 = random_tensor({4, 16}, g);
  auto x = random_tensor({2, 4, 8, 8}, g);
  auto res = check_op_gradients(
      [](const auto& in) {
        RouterParams<double> q{in[1], in[2], in[3], in[4]};
        return route_weights(in[0], q);
      },
      {x, r.w1, r.b1, r.w2, r.b2}, GetParam());
  EXPECT_TRUE(res.pass) << res.worst_rel_err << " " << res.worst_abs_err;
}

INSTANTIATE_TEST_SUITE_P(Seeds, RouterGradients, ::testing::Values(1, 2, 3, 4, 5));
