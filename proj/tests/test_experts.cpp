#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ssam/experts.hpp"
#include "test_support.hpp"

using namespace ssam;
using namespace ssam::experts;
using ssam::testing::check_op_gradients;
using ssam::testing::naive_conv;
using ssam::testing::random_tensor;

namespace {

double at(const Tensor<double>& t, std::size_t c, std::size_t i, std::size_t j) {
  return t[(c * t.dim(2) + i) * t.dim(3) + j];
}

// Explicit heat-equation steps with unit conductance and no flux through the border.
std::vector<double> heat_steps(std::vector<double> v, std::size_t h, std::size_t w, double dt, int steps) {
  for (int s = 0; s < steps; ++s) {
    std::vector<double> next = v;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double lap = 0;
        const double c = v[i * w + j];
        if (i > 0) lap += v[(i - 1) * w + j] - c;
        if (i + 1 < h) lap += v[(i + 1) * w + j] - c;
        if (j > 0) lap += v[i * w + j - 1] - c;
        if (j + 1 < w) lap += v[i * w + j + 1] - c;
        next[i * w + j] = c + dt * lap;
      }
    v = next;
  }
  return v;
}

}  // namespace

TEST(Sobel, ConstantImageHasNoGradient) {
  Tensor<double> x({1, 2, 5, 5}, 0.3);
  auto [gx, gy] = sobel_gradients(x);
  for (double v : gx.data()) EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : gy.data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Sobel, UnitRampAlongWidth) {
  Tensor<double> x({1, 1, 6, 6});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) x.mutable_data()[i * 6 + j] = double(j);
  auto [gx, gy] = sobel_gradients(x);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j) {
      EXPECT_DOUBLE_EQ(at(gx, 0, i, j), 8.0);
      EXPECT_DOUBLE_EQ(at(gy, 0, i, j), 0.0);
    }
}

TEST(Sobel, MatchesReflectCorrelationOracle) {
  std::mt19937_64 rng(21);
  auto x = random_tensor({1, 1, 7, 7}, rng);
  Tensor<double> kx({1, 1, 3, 3}, std::vector<double>{-1, 0, 1, -2, 0, 2, -1, 0, 1});
  Tensor<double> ky({1, 1, 3, 3}, std::vector<double>{-1, -2, -1, 0, 0, 0, 1, 2, 1});
  auto [gx, gy] = sobel_gradients(x);
  auto rx = naive_conv(x, kx, 1, true), ry = naive_conv(x, ky, 1, true);
  for (std::size_t i = 0; i < 49; ++i) {
    EXPECT_NEAR(gx[i], rx[i], 1e-12);
    EXPECT_NEAR(gy[i], ry[i], 1e-12);
  }
}

TEST(Sobel, RejectsTinyImages) {
  Tensor<double> x({1, 1, 2, 5});
  EXPECT_THROW(sobel_gradients(x), DimensionError);
}

TEST(Pimdo, ConstantImageUnchanged) {
  Rng rng(1);
  auto p = PimdoParams<double>::init(rng);
  Tensor<double> x({1, 3, 6, 6}, -0.4);
  auto y = pimdo_forward(x, p);
  for (double v : y.data()) EXPECT_EQ(v, -0.4);
}

TEST(Pimdo, ClosedControllerFreezes) {
  Rng rng(2);
  auto p = PimdoParams<double>::init(rng);
  p.force_conductance(false);
  std::mt19937_64 r(3);
  auto x = random_tensor({2, 2, 6, 6}, r);
  auto y = pimdo_forward(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Pimdo, OpenControllerIsHeatEquation) {
  Rng rng(4);
  auto p = PimdoParams<double>::init(rng);
  p.force_conductance(true);
  std::vector<double> edge(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 3; j < 5; ++j) edge[i * 5 + j] = 1.0;
  Tensor<double> x({1, 1, 5, 5}, edge);
  auto y = pimdo_forward(x, p);
  auto ref = heat_steps(edge, 5, 5, 0.2, 3);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Pimdo, RejectsUnstableStep) {
  Rng rng(5);
  auto p = PimdoParams<double>::init(rng);
  Tensor<double> x({1, 1, 4, 4});
  p.dt = 0.3;
  EXPECT_THROW(pimdo_forward(x, p), ConfigError);
  p.dt = 0.0;
  EXPECT_THROW(pimdo_forward(x, p), ConfigError);
}

TEST(Pimdo, MaximumPrincipleOnRandomImages) {
  std::mt19937_64 r(6);
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(100 + trial);
    auto p = PimdoParams<double>::init(rng);
    auto x = random_tensor({1, 1, 8, 8}, r, -3, 3);
    auto y = pimdo_forward(x, p);
    const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    for (double v : y.data()) {
      ASSERT_GE(v, *lo - 1e-12);
      ASSERT_LE(v, *hi + 1e-12);
    }
  }
}

TEST(Pimdo, OpenControllerConservesSum) {
  Rng rng(7);
  auto p = PimdoParams<double>::init(rng);
  p.force_conductance(true);
  std::mt19937_64 r(8);
  auto x = random_tensor({1, 1, 9, 9}, r, 0, 1);
  auto y = pimdo_forward(x, p);
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) sx += x[i], sy += y[i];
  EXPECT_LE(std::abs(sx - sy) / std::abs(sx), 1e-6);
}

TEST(Spd, OpenGatesAtInitReconstruct) {
  std::mt19937_64 r(9);
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(trial);
    auto p = SpdParams<double>::init(3, rng);
    p.force_gates(true);
    auto x = random_tensor({1, 3, 6, 6}, r, -2, 2);
    auto y = spd_forward(x, p);
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_NEAR(y[i], x[i], 1e-6);
  }
}

TEST(Spd, ClosedGatesGiveZero) {
  Rng rng(10);
  auto p = SpdParams<double>::init(2, rng);
  p.force_gates(false);
  std::mt19937_64 r(11);
  auto x = random_tensor({2, 2, 5, 5}, r);
  auto y = spd_forward(x, p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Spd, MatchesAnalyseScaleSynthesiseOracle) {
  Rng rng(12);
  auto p = SpdParams<double>::init(2, rng);
  std::mt19937_64 r(13);
  p.analysis = random_tensor({8, 1, 3, 3}, r);
  p.synthesis = random_tensor({2, 4, 3, 3}, r);
  auto x = random_tensor({1, 2, 5, 5}, r);
  auto alpha = random_tensor({1, 8}, r, 0, 1);
  auto y = spd_synthesize(spd_analyze(x, p), alpha, p);

  auto z = naive_conv(x, p.analysis, 2);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 25; ++i) z.mutable_data()[c * 25 + i] *= alpha[c];
  auto ref = naive_conv(z, p.synthesis, 2);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Spd, GatesLieInUnitInterval) {
  Rng rng(14);
  auto p = SpdParams<double>::init(3, rng);
  std::mt19937_64 r(15);
  auto x = random_tensor({2, 3, 6, 6}, r, -5, 5);
  auto g = spd_gates(spd_analyze(x, p), p);
  EXPECT_EQ(g.shape(), (Shape{2, 12}));
  for (double v : g.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Spd, WrongSubbandCountIsConfigError) {
  Rng rng(16);
  auto p = SpdParams<double>::init(2, rng);
  p.analysis = Tensor<double>({6, 1, 3, 3});
  Tensor<double> x({1, 2, 4, 4});
  EXPECT_THROW(spd_forward(x, p), ConfigError);
}

TEST(Hplsm, IdentityModulationIsBaseConv) {
  Rng rng(17);
  auto p = HplsmParams<double>::init(3, rng);
  p.force_modulation(1.0, 0.0);
  std::mt19937_64 r(18);
  auto x = random_tensor({2, 3, 5, 5}, r);
  auto y = hplsm_forward(x, p);
  auto base = ops::conv2d(x, p.base_w, p.base_b);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], base[i]);
}

TEST(Hplsm, ZeroGainGivesConstant) {
  Rng rng(19);
  auto p = HplsmParams<double>::init(3, rng);
  p.force_modulation(0.0, 0.75);
  std::mt19937_64 r(20);
  auto x = random_tensor({1, 3, 4, 4}, r);
  auto y = hplsm_forward(x, p);
  for (double v : y.data()) EXPECT_EQ(v, 0.75);
}

TEST(Hplsm, MatchesElementwiseOracle) {
  Rng rng(21);
  const std::size_t c = 3, hw = 25;
  auto p = HplsmParams<double>::init(c, rng);
  std::mt19937_64 r(22);
  p.fc_w = random_tensor({2 * c, 2 * c}, r);
  p.hyp_b2 = random_tensor({2 * c}, r);
  auto x = random_tensor({1, c, 5, 5}, r);
  auto y = hplsm_forward(x, p);

  auto base = naive_conv(x, p.base_w);
  auto h1 = naive_conv(x, p.hyp_w1);
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t i = 0; i < hw; ++i) {
      double& v = h1.mutable_data()[k * hw + i];
      v = std::max(0.0, v + p.hyp_b1[k]);
    }
  auto maps = naive_conv(h1, p.hyp_w2);
  std::vector<double> pooled(2 * c, 0.0);
  for (std::size_t k = 0; k < 2 * c; ++k)
    for (std::size_t i = 0; i < hw; ++i) {
      double& v = maps.mutable_data()[k * hw + i];
      v += p.hyp_b2[k];
      pooled[k] += v / hw;
    }
  std::vector<double> global(2 * c);
  for (std::size_t o = 0; o < 2 * c; ++o) {
    global[o] = p.fc_b[o];
    for (std::size_t k = 0; k < 2 * c; ++k) global[o] += p.fc_w[o * 2 * c + k] * pooled[k];
  }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) {
      const double gamma = maps[ch * hw + i] + global[ch];
      const double beta = maps[(c + ch) * hw + i] + global[c + ch];
      const double expect = gamma * (base[ch * hw + i] + p.base_b[ch]) + beta;
      EXPECT_NEAR(y[ch * hw + i], expect, 1e-12);
    }
}

TEST(Tgds, ZeroOffsetsIsDepthwiseConv) {
  Rng rng(23);
  auto p = TgdsParams<double>::init(3, rng);
  std::mt19937_64 r(24);
  auto x = random_tensor({2, 3, 6, 5}, r);
  auto out = tgds_forward(x, p);
  auto ref = naive_conv(x, ops::reshape(p.agg_w, {3, 1, 3, 3}), 3);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(out.y[i], ref[i], 1e-12);
  EXPECT_EQ(out.coords.shape(), (Shape{2, 9 * 30, 2}));
}

TEST(Tgds, UnitShiftMatchesShiftedInput) {
  Rng rng(25);
  auto p = TgdsParams<double>::init(2, rng);
  std::mt19937_64 r(26);
  auto x = random_tensor({1, 2, 5, 6}, r);
  auto zero_out = tgds_forward(x, p);
  (void)zero_out;
  for (std::size_t t = 0; t < 9; ++t) p.off_b.mutable_data()[2 * t + 1] = std::atanh(0.5);
  auto shifted_out = tgds_forward(x, p);

  Tensor<double> shifted({1, 2, 5, 6});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j + 1 < 6; ++j) shifted.mutable_data()[(c * 5 + i) * 6 + j] = at(x, c, i, j + 1);
  auto base = TgdsParams<double>::init(2, rng);
  base.agg_w = p.agg_w;
  auto ref = tgds_forward(shifted, base);
  // Column 0 of the shifted image sees zero padding where the original sees x[:, :, :, 0].
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 1; j < 6; ++j) EXPECT_NEAR(at(shifted_out.y, c, i, j), at(ref.y, c, i, j), 1e-12);
}

TEST(Tgds, ImpulseGivesBoxResponse) {
  Rng rng(27);
  auto p = TgdsParams<double>::init(1, rng);
  for (double& v : p.agg_w.mutable_data()) v = 1.0;
  Tensor<double> x({1, 1, 5, 5});
  x.mutable_data()[12] = 1.0;
  auto y = tgds_forward(x, p).y;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const bool inside = i >= 1 && i <= 3 && j >= 1 && j <= 3;
      EXPECT_DOUBLE_EQ(at(y, 0, i, j), inside ? 1.0 : 0.0);
    }
}

TEST(Experts, PreserveShape) {
  Rng rng(28);
  std::mt19937_64 r(29);
  auto x = random_tensor({2, 4, 8, 8}, r);
  EXPECT_EQ(pimdo_forward(x, PimdoParams<double>::init(rng)).shape(), x.shape());
  EXPECT_EQ(spd_forward(x, SpdParams<double>::init(4, rng)).shape(), x.shape());
  EXPECT_EQ(hplsm_forward(x, HplsmParams<double>::init(4, rng)).shape(), x.shape());
  EXPECT_EQ(tgds_forward(x, TgdsParams<double>::init(4, rng)).y.shape(), x.shape());
}

// Reverse mode against central differences for every expert, input and
// parameters together, on 8x8x4 inputs over five seeds.
class ExpertGradients : public ::testing::TestWithParam<int> {};

TEST_P(ExpertGradients, Pimdo) {
  Rng rng(GetParam());
  auto p = PimdoParams<double>::init(rng);
  std::mt19937_64 r(GetParam() + 50);
  auto x = random_tensor({1, 4, 8, 8}, r);
  auto res = check_op_gradients(
      [&](const auto& in) {
        PimdoParams<double> q = p;
        q.ctrl_w1 = in[1], q.ctrl_b1 = in[2], q.ctrl_w2 = in[3], q.ctrl_b2 = in[4];
        return pimdo_forward(in[0], q);
      },
      {x, p.ctrl_w1, p.ctrl_b1, p.ctrl_w2, p.ctrl_b2}, GetParam());
  EXPECT_TRUE(res.pass) << res.worst_rel_err << " " << res.worst_abs_err;
}

TEST_P(ExpertGradients, Spd) {
  Rng rng(GetParam());
  auto p = SpdParams<double>::init(4, rng);
  std::mt19937_64 r(GetParam() + 60);
  auto x = random_tensor({1, 4, 8, 8}, r);
  auto res = check_op_gradients(
      [&](const auto& in) {
        SpdParams<double> q;
        q.analysis = in[1], q.synthesis = in[2], q.att_w1 = in[3], q.att_b1 = in[4], q.att_w2 = in[5],
        q.att_b2 = in[6];
        return spd_forward(in[0], q);
      },
      {x, p.analysis, p.synthesis, p.att_w1, p.att_b1, p.att_w2, p.att_b2}, GetParam());
  EXPECT_TRUE(res.pass) << res.worst_rel_err << " " << res.worst_abs_err;
}

TEST_P(ExpertGradients, Hplsm) {
  Rng rng(GetParam());
  auto p = HplsmParams<double>::init(4, rng);
  std::mt19937_64 r(GetParam() + 70);
  auto x = random_tensor({1, 4, 8, 8}, r);
  auto res = check_op_gradients(
      [&](const auto& in) {
        HplsmParams<double> q;
        q.base_w = in[1], q.base_b = in[2], q.hyp_w1 = in[3], q.hyp_b1 = in[4], q.hyp_w2 = in[5],
        q.hyp_b2 = in[6], q.fc_w = in[7], q.fc_b = in[8];
        return hplsm_forward(in[0], q);
      },
      {x, p.base_w, p.base_b, p.hyp_w1, p.hyp_b1, p.hyp_w2, p.hyp_b2, p.fc_w, p.fc_b}, GetParam());
  EXPECT_TRUE(res.pass) << res.worst_rel_err << " " << res.worst_abs_err;
}

TEST_P(ExpertGradients, Tgds) {
  Rng rng(GetParam());
  auto p = TgdsParams<double>::init(4, rng);
  std::mt19937_64 r(GetParam() + 80);
  // fractional offsets stay inside (0.2, 0.8)
  p.off_w = random_tensor({18, 4, 3, 3}, r, -0.003, 0.003);
  p.off_b = random_tensor({18}, r, 0.2, 0.3);
  for (std::size_t i = 0; i < 18; i += 2) p.off_b.mutable_data()[i] *= -1;
  auto x = random_tensor({1, 4, 8, 8}, r);
  auto res = check_op_gradients(
      [&](const auto& in) {
        TgdsParams<double> q;
        q.off_w = in[1], q.off_b = in[2], q.agg_w = in[3];
        return tgds_forward(in[0], q).y;
      },
      {x, p.off_w, p.off_b, p.agg_w}, GetParam());
  EXPECT_TRUE(res.pass) << res.worst_rel_err << " " << res.worst_abs_err;
}

INSTANTIATE_TEST_SUITE_P(Seeds, ExpertGradients, ::testing::Values(1, 2, 3, 4, 5));
