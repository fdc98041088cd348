#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

using namespace rsca;
using test::probe;
using test::random_tensor;

TEST(LogKernel, ZeroSumNegativeCentreSymmetric) {
  const auto k = log_kernel();
  EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 0.0, 1e-12);
  EXPECT_LT(k[12], 0.0);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      EXPECT_DOUBLE_EQ(k[y * 5 + x], k[x * 5 + y]);
      EXPECT_DOUBLE_EQ(k[y * 5 + x], k[(4 - y) * 5 + x]);
    }
  // Before centring, the continuous formula at the origin is -1/(pi sigma^4).
  double raw_sum = 0;
  for (int y = -2; y <= 2; ++y)
    for (int x = -2; x <= 2; ++x) {
      const double d2 = x * x + y * y;
      raw_sum += (d2 - 2) * std::exp(-d2 / 2) / (2 * std::numbers::pi);
    }
  EXPECT_NEAR(k[12], -1.0 / std::numbers::pi - raw_sum / 25, 1e-12);
}

TEST(LogEnhance, ConstantMapsPassUnchanged) {
  for (float c : {0.0f, 0.5f, -3.25f}) {
    Tensor<float> x(Shape{2, 3, 7, 9}, c);
    Tensor<float> r = log_response(x);
    Tensor<float> y = log_enhance(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_NEAR(r[i], 0.0f, 1e-6f);
      EXPECT_NEAR(y[i], c, 1e-6f);
    }
  }
}

TEST(LogEnhance, SinglePixelImpulse) {
  Tensor<double> x(Shape{1, 1, 9, 9}, 0.0);
  x.mutable_data()[4 * 9 + 4] = 2.0;
  Tensor<double> y = log_enhance(x);
  const auto k = log_kernel();
  double total = 0;
  for (std::size_t yy = 0; yy < 9; ++yy)
    for (std::size_t xx = 0; xx < 9; ++xx) {
      const double v = y.at(0, 0, yy, xx);
      total += v;
      const long dy = static_cast<long>(yy) - 4, dx = static_cast<long>(xx) - 4;
      double expect = (dy == 0 && dx == 0) ? 2.0 : 0.0;
      if (std::abs(dy) <= 2 && std::abs(dx) <= 2) expect += 2.0 * k[(2 - dy) * 5 + (2 - dx)];
      EXPECT_NEAR(v, expect, 1e-14);
    }
  EXPECT_NEAR(total, 2.0, 1e-12);
  EXPECT_LT(y.at(0, 0, 4, 4), 2.0);  // negative centre response
}

TEST(LogEnhance, ShapeAndGradient) {
  Tensor<float> big(Shape{1, 64, 128, 128}, 0.1f);
  EXPECT_EQ(log_enhance(big).shape(), big.shape());
  Tensor<double> x = random_tensor(Shape{2, 2, 6, 5}, 3);
  EXPECT_LT(grad_check([&] { return probe(log_enhance(x)); }, {x}).max_rel_error, 1e-4);
}

TEST(Mscas, ZeroFcIsIdentityOnSqueezedMap) {
  ParameterStore<float> store(1);
  auto p = MscasParams<float>::create(store, "m", 6);
  for (auto& v : p.fc.weight.mutable_data()) v = 0;
  Tensor<float> x = random_tensor<float>(Shape{2, 6, 4, 4}, 2);
  auto out = mscas_skip(x, p);
  EXPECT_EQ(out.refined.vec(), out.squeezed.vec());
  for (float v : out.weights.data()) EXPECT_FLOAT_EQ(v, 1.0f / 6.0f);
}

TEST(Mscas, WeightsAreDistributionsAndStreamsConcatenate) {
  ParameterStore<float> store(3);
  auto p = MscasParams<float>::create(store, "m", 8);
  for (auto& v : p.fc.bias.mutable_data()) v = 0.3f * (&v - p.fc.bias.mutable_data().data());
  EXPECT_EQ(store.get("m.squeeze.weight").shape(), (Shape{8, 16, 1, 1}));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor<float> x = random_tensor<float>(Shape{2, 8, 4, 4}, seed, -4.0, 4.0);
    auto out = mscas_skip(x, p);
    ASSERT_EQ(out.weights.shape(), (Shape{2, 1, 1, 8}));
    for (std::size_t n = 0; n < 2; ++n) {
      double total = 0;
      for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_GT(out.weights[n * 8 + c], 0.0f);
        total += out.weights[n * 8 + c];
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
    // F_ref = (C s) * X_s channel by channel.
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t i = 0; i < 16; ++i) {
          const std::size_t idx = (n * 8 + c) * 16 + i;
          EXPECT_NEAR(out.refined[idx], 8.0f * out.weights[n * 8 + c] * out.squeezed[idx], 1e-5f);
        }
  }
  EXPECT_THROW(mscas(Tensor<float>(Shape{1, 8, 4, 4}), Tensor<float>(Shape{1, 8, 4, 2}), p), DimensionError);
  EXPECT_THROW(mscas_skip(Tensor<float>(Shape{1, 4, 4, 4}), p), DimensionError);
}

TEST(Mscas, ScalingLogitsKeepsArgmax) {
  Tensor<double> logits = random_tensor(Shape{1, 1, 1, 7}, 4, -2.0, 2.0);
  auto argmax = [](const Tensor<double>& t) {
    return std::max_element(t.data().begin(), t.data().end()) - t.data().begin();
  };
  const auto base = argmax(softmax(logits));
  for (double k : {0.1, 1.0, 3.0, 50.0}) EXPECT_EQ(argmax(softmax(scale(logits, k))), base);
}

TEST(Mscas, GapOfConstantChannel) {
  Tensor<float> x(Shape{1, 3, 5, 5}, 0.0f);
  for (std::size_t i = 0; i < 25; ++i) x.mutable_data()[25 + i] = 1.75f;
  EXPECT_EQ(global_avg_pool(x)[1], 1.75f);
}

TEST(Mscas, Gradient) {
  ParameterStore<double> store(5);
  auto p = MscasParams<double>::create(store, "m", 3);
  Tensor<double> xg = random_tensor(Shape{2, 3, 4, 4}, 6);
  Tensor<double> xb = random_tensor(Shape{2, 3, 4, 4}, 7);
  auto inputs = store.trainable();
  inputs.push_back(xg);
  inputs.push_back(xb);
  EXPECT_LT(grad_check([&] { return probe(mscas(xg, xb, p).refined); }, inputs, 1e-6).max_rel_error, 1e-3);
}

TEST(PixelAttention, ZeroGateHalvesInput) {
  ParameterStore<float> store(6);
  auto p = PixelAttentionParams<float>::create(store, "pa", 5);
  for (auto& v : p.g.mutable_data()) v = 0;
  Tensor<float> z = random_tensor<float>(Shape{2, 5, 4, 4}, 7);
  Tensor<float> s = random_tensor<float>(Shape{2, 5, 4, 4}, 8);
  auto out = pixel_attention(z, s, p);
  ASSERT_EQ(out.map.shape(), (Shape{2, 1, 4, 4}));
  for (float v : out.map.data()) EXPECT_EQ(v, 0.5f);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(out.out[i], z[i] / 2);
}

TEST(PixelAttention, MapInUnitRangeAndBoundsOutput) {
  ParameterStore<float> store(7);
  auto p = PixelAttentionParams<float>::create(store, "pa", 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor<float> z = random_tensor<float>(Shape{1, 4, 6, 6}, seed, -5.0, 5.0);
    Tensor<float> s = random_tensor<float>(Shape{1, 4, 6, 6}, seed + 100, -5.0, 5.0);
    auto out = pixel_attention(z, s, p);
    for (float v : out.map.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_LE(std::abs(out.out[i]), std::abs(z[i]));
  }
  EXPECT_THROW(pixel_attention(Tensor<float>(Shape{1, 4, 6, 6}), Tensor<float>(Shape{1, 4, 6, 5}), p), DimensionError);
}

TEST(PixelAttention, Gradient) {
  ParameterStore<double> store(8);
  auto p = PixelAttentionParams<double>::create(store, "pa", 3);
  for (auto& v : p.b1.mutable_data()) v = 0.05;
  Tensor<double> z = random_tensor(Shape{2, 3, 4, 4}, 9);
  Tensor<double> s = random_tensor(Shape{2, 3, 4, 4}, 10);
  auto inputs = store.trainable();
  inputs.push_back(z);
  inputs.push_back(s);
  EXPECT_LT(grad_check([&] { return probe(pixel_attention(z, s, p).out); }, inputs, 1e-6).max_rel_error, 1e-3);
}
