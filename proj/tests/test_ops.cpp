#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_support.hpp"

using namespace ssam;
using ssam::testing::check_op_gradients;
using ssam::testing::naive_conv;
using ssam::testing::random_tensor;


TEST(Conv2d, BoxSumOnOnesMatchesNeighbourCounts) {
  Tensor<double> x({1, 1, 3, 3}, 1.0);
  Tensor<double> k({1, 1, 3, 3}, 1.0);
  auto y = ops::conv2d(x, k);
  EXPECT_DOUBLE_EQ(y[4], 9.0);
  EXPECT_DOUBLE_EQ(y[0], 4.0);
  EXPECT_DOUBLE_EQ(y[1], 6.0);
}

TEST(Conv2d, IdentityKernelIsBitExact) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3, 5, 6}, rng);
  Tensor<double> k({3, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k.mutable_data()[c * 9 + 4] = 1.0;
  for (auto pad : {ops::Padding::Zero, ops::Padding::Reflect}) {
    auto y = ops::conv2d(x, k, {}, 3, pad);
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y[i], x[i]);
  }
}

TEST(Conv2d, MatchesNestedLoopReference) {
  std::mt19937_64 rng(2);
  for (std::size_t groups : {1u, 2u}) {
    auto x = random_tensor({2, 4, 7, 5}, rng);
    auto k = random_tensor({6, 4 / groups, 3, 3}, rng);
    auto y = ops::conv2d(x, k, {}, groups);
    auto ref = naive_conv(x, k, groups);
    for (std::size_t i = 0; i < y.numel(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ReflectPaddingMirrorsWithoutEdgeRepeat) {
  // 1-D row [1, 2, 3] with kernel picking the left neighbour: x[-1] = x[1].
  Tensor<double> x({1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  Tensor<double> k({1, 1, 1, 3}, std::vector<double>{1, 0, 0});
  auto y = ops::conv2d(x, k, {}, 1, ops::Padding::Reflect);
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor<double> x({1, 3, 4, 4});
  Tensor<double> k({2, 2, 3, 3});
  EXPECT_THROW(ops::conv2d(x, k), DimensionError);
}

TEST(Conv2d, RejectsNonFiniteOutput) {
  Tensor<double> x({1, 1, 2, 2}, std::numeric_limits<double>::max());
  Tensor<double> k({1, 1, 3, 3}, 2.0);
  EXPECT_THROW(ops::conv2d(x, k), NumericError);
}

TEST(BilinearSample, CentreOfTwoByTwoIsAverage) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  Tensor<double> c({1, 1, 2}, std::vector<double>{0.5, 0.5});
  EXPECT_DOUBLE_EQ(ops::bilinear_sample(x, c)[0], 1.5);
}

TEST(BilinearSample, IntegerCoordsReturnPixelsAndOutsideIsZero) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({1, 2, 3, 4}, rng);
  Tensor<double> c({1, 3, 2}, std::vector<double>{2, 3, 0, 1, -5, 10});
  auto s = ops::bilinear_sample(x, c);
  EXPECT_EQ(s[0], x[2 * 4 + 3]);
  EXPECT_EQ(s[1], x[1]);
  EXPECT_EQ(s[2], 0.0);
  EXPECT_EQ(s[3], x[12 + 11]);
}

TEST(Softmax, UniformLogitsGiveUniformAndLargeLogitsStayFinite) {
  Tensor<double> a({1, 4}, 3.0);
  auto p = ops::softmax_stable(a, 1);
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  Tensor<double> b({1, 3}, std::vector<double>{1000, 1000, -1000});
  auto q = ops::softmax_stable(b, 1);
  EXPECT_DOUBLE_EQ(q[0], 0.5);
  EXPECT_DOUBLE_EQ(q[2], 0.0);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(4);
  auto a = random_tensor({5, 7}, rng, -30, 30);
  auto p = ops::softmax_stable(a, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 7; ++k) s += p[r * 7 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Tensor<double> x({3}, std::vector<double>{1, -2, 0.5});
  x.set_requires_grad(true);
  Graph<double> g;
  auto rec = g.record();
  auto loss = ops::sum(ops::square(x));
  backward(g, loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 1.0);
}

TEST(Backward, SumGivesOnes) {
  Tensor<double> x({2, 2}, 5.0);
  x.set_requires_grad(true);
  Graph<double> g;
  auto rec = g.record();
  backward(g, ops::sum(x));
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  Graph<double> g;
  auto rec = g.record();
  EXPECT_THROW(backward(g, ops::square(x)), ContractError);
}

TEST(Backward, NothingRecordedWithoutTrainableInputs) {
  Tensor<double> x({4}, 1.0);
  Graph<double> g;
  auto rec = g.record();
  ops::sum(ops::relu(x));
  EXPECT_EQ(g.size(), 0u);
}

TEST(Backward, NoGradSuspendsRecording) {
  Tensor<double> x({4}, 1.0);
  x.set_requires_grad(true);
  Graph<double> g;
  auto rec = g.record();
  {
    NoGrad<double> ng;
    ops::sum(x);
  }
  EXPECT_EQ(g.size(), 0u);
  ops::sum(x);
  EXPECT_EQ(g.size(), 1u);
}

TEST(Backward, FrozenWeightGetsNoGradient) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3}, rng).set_requires_grad(true);
  auto w = random_tensor({4, 3}, rng);
  Graph<double> g;
  auto rec = g.record();
  backward(g, ops::sum(ops::linear(x, w)));
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(w.has_grad());
}

// Finite differences against reverse mode for each primitive.
class PrimitiveGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{11};
  void expect_ok(const ssam::testing::OpFn& op, std::vector<Tensor<double>> inputs) {
    auto r = check_op_gradients(op, std::move(inputs));
    EXPECT_TRUE(r.pass) << "worst rel " << r.worst_rel_err << " worst abs " << r.worst_abs_err;
    EXPECT_LE(r.worst_rel_err, 1e-4);
  }
};

TEST_F(PrimitiveGradients, Elementwise) {
  auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 3, 4}, rng);
  expect_ok([](const auto& in) { return ops::add(in[0], in[1]); }, {a, b});
  expect_ok([](const auto& in) { return ops::sub(in[0], in[1]); }, {a, b});
  expect_ok([](const auto& in) { return ops::mul(in[0], in[1]); }, {a, b});
  expect_ok([](const auto& in) { return ops::scale(in[0], 2.5); }, {a});
  expect_ok([](const auto& in) { return ops::add_scalar(in[0], -0.3); }, {a});
  expect_ok([](const auto& in) { return ops::sigmoid(in[0]); }, {a});
  expect_ok([](const auto& in) { return ops::tanh(in[0]); }, {a});
  expect_ok([](const auto& in) { return ops::gelu(in[0]); }, {a});
  expect_ok([](const auto& in) { return ops::square(in[0]); }, {a});
  auto pos = random_tensor({2, 3, 4}, rng, 0.1, 2.0);
  expect_ok([](const auto& in) { return ops::sqrt_eps(in[0], 1e-6); }, {pos});
  // Keep relu inputs away from the kink.
  auto away = random_tensor({2, 3, 4}, rng, 0.05, 1.0);
  for (std::size_t i = 0; i < away.numel(); i += 2) away.mutable_data()[i] *= -1;
  expect_ok([](const auto& in) { return ops::relu(in[0]); }, {away});
}

TEST_F(PrimitiveGradients, ReductionsAndLayout) {
  auto a = random_tensor({3, 4}, rng);
  expect_ok([](const auto& in) { return ops::mean(in[0]); }, {a});
  expect_ok([](const auto& in) { return ops::mean_rows(in[0]); }, {a});
  expect_ok([](const auto& in) { return ops::reshape(in[0], {2, 6}); }, {a});
  auto b = random_tensor({2, 3, 5}, rng);
  expect_ok([](const auto& in) { return ops::transpose12(in[0]); }, {b});
  auto img = random_tensor({2, 3, 4, 4}, rng);
  expect_ok([](const auto& in) { return ops::slice_channels(in[0], 1, 2); }, {img});
  expect_ok([](const auto& in) { return ops::patchify(in[0], 2); }, {img});
}

TEST_F(PrimitiveGradients, Dense) {
  auto x = random_tensor({5, 4}, rng), w = random_tensor({3, 4}, rng), b = random_tensor({3}, rng);
  expect_ok([](const auto& in) { return ops::linear(in[0], in[1], in[2]); }, {x, w, b});
  auto g = random_tensor({4}, rng, 0.5, 1.5), beta = random_tensor({4}, rng);
  expect_ok([](const auto& in) { return ops::layer_norm(in[0], in[1], in[2]); }, {x, g, beta});
  expect_ok([](const auto& in) { return ops::softmax_stable(in[0], 1); }, {x});
  expect_ok([](const auto& in) { return ops::softmax_stable(in[0], 0); }, {x});
  auto q = random_tensor({2, 5, 4}, rng), k = random_tensor({2, 5, 4}, rng), v = random_tensor({2, 5, 4}, rng);
  expect_ok([](const auto& in) { return ops::attention(in[0], in[1], in[2], 2); }, {q, k, v});
}

TEST_F(PrimitiveGradients, Convolutions) {
  auto x = random_tensor({2, 4, 5, 6}, rng);
  auto k = random_tensor({6, 2, 3, 3}, rng), b = random_tensor({6}, rng);
  expect_ok([](const auto& in) { return ops::conv2d(in[0], in[1], in[2], 2); }, {x, k, b});
  expect_ok([](const auto& in) { return ops::conv2d(in[0], in[1], in[2], 2, ops::Padding::Reflect); },
            {x, k, b});
  auto k1 = random_tensor({3, 4, 1, 1}, rng);
  expect_ok([](const auto& in) { return ops::conv2d(in[0], in[1]); }, {x, k1});
  auto kt = random_tensor({4, 3, 2, 2}, rng), bt = random_tensor({3}, rng);
  expect_ok([](const auto& in) { return ops::conv_transpose2d(in[0], in[1], in[2]); }, {x, kt, bt});
  expect_ok([](const auto& in) { return ops::upsample_nearest(in[0], 2); }, {x});
  expect_ok([](const auto& in) { return ops::global_avg_pool(in[0]); }, {x});
  auto distinct = random_tensor({1, 2, 4, 4}, rng);
  expect_ok([](const auto& in) { return ops::max_pool2d(in[0], 2); }, {distinct});
}

TEST_F(PrimitiveGradients, Broadcasting) {
  auto x = random_tensor({2, 3, 4, 4}, rng);
  auto s = random_tensor({2, 3}, rng), c = random_tensor({3}, rng);
  expect_ok([](const auto& in) { return ops::mul_nc(in[0], in[1]); }, {x, s});
  expect_ok([](const auto& in) { return ops::add_nc(in[0], in[1]); }, {x, s});
  expect_ok([](const auto& in) { return ops::scale_channels(in[0], in[1]); }, {x, c});
  auto y = random_tensor({2, 3, 4, 4}, rng), w = random_tensor({2, 2}, rng);
  expect_ok(
      [](const auto& in) {
        std::vector<Tensor<double>> parts{in[0], in[1]};
        return ops::mix<double>(parts, in[2]);
      },
      {x, y, w});
}

TEST_F(PrimitiveGradients, Sampling) {
  auto x = random_tensor({1, 2, 4, 5}, rng);
  // Keep coordinates off integer grid lines where bilinear is not smooth.
  Tensor<double> coords({1, 6, 2}, std::vector<double>{0.3, 0.7, 1.2, 3.6, 2.5, 0.4, -0.5, 1.3, 3.4, 4.2, 1.6, 2.3});
  expect_ok([](const auto& in) { return ops::bilinear_sample(in[0], in[1]); }, {x, coords});
  auto off = random_tensor({1, 18, 3, 3}, rng, -0.4, 0.4);
  expect_ok([](const auto& in) { return ops::offsets_to_coords(in[0], 3); }, {off});
  auto samples = random_tensor({2, 3, 9, 5}, rng), w = random_tensor({3, 9}, rng);
  expect_ok([](const auto& in) { return ops::tap_sum(in[0], in[1]); }, {samples, w});
  auto img = random_tensor({2, 1, 5, 4}, rng), cond = random_tensor({2, 1, 5, 4}, rng, 0.1, 1.0);
  expect_ok([](const auto& in) { return ops::diffusion_step(in[0], in[1], 0.2); }, {img, cond});
}

TEST(Diffusion, ConservesMassAndKeepsConstants) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({1, 1, 8, 8}, rng);
  auto c = random_tensor({1, 1, 8, 8}, rng, 0, 1);
  auto y = ops::diffusion_step(x, c, 0.25);
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) sx += x[i], sy += y[i];
  EXPECT_NEAR(sx, sy, 1e-12);
  Tensor<double> flat({1, 1, 8, 8}, 0.7);
  auto z = ops::diffusion_step(flat, c, 0.25);
  for (double v : z.data()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(Diffusion, ZeroConductanceIsIdentity) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({1, 2, 6, 6}, rng);
  Tensor<double> c({1, 2, 6, 6}, 0.0);
  auto y = ops::diffusion_step(x, c, 0.2);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Attention, SingleKeyReturnsItsValue) {
  std::mt19937_64 rng(8);
  auto q = random_tensor({1, 1, 4}, rng), k = random_tensor({1, 1, 4}, rng), v = random_tensor({1, 1, 4}, rng);
  auto y = ops::attention(q, k, v, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], v[i], 1e-15);
}

TEST(Pooling, MaxPoolAndUpsample) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 4, 3, 2});
  EXPECT_EQ(ops::max_pool2d(x, 2)[0], 4.0);
  auto u = ops::upsample_nearest(x, 2);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(u[5], 1.0);
  EXPECT_EQ(u[6], 4.0);
}
