#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace rsca;
using test::probe;
using test::random_tensor;

namespace {

template <class T>
void zero_all(ParameterStore<T>& store) {
  for (auto& p : store.entries())
    for (auto& v : p.value.mutable_data()) v = T(0);
}

std::vector<Tensor<double>> params_of(const ParameterStore<double>& store) { return store.trainable(); }

constexpr double kBlockTol = 1e-3;
constexpr double kBlockEps = 1e-6;

}  // namespace

TEST(ResidualBlock, ZeroWeightsSameWidthIsRelu) {
  ParameterStore<float> store(1);
  auto p = ResidualBlockParams<float>::create(store, "res", 4, 4);
  EXPECT_FALSE(p.projection.has_value());
  zero_all(store);
  Tensor<float> x = random_tensor<float>(Shape{2, 4, 5, 5}, 2);
  Tensor<float> y = residual_block(x, p);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::max(0.0f, x[i]));
}

TEST(ResidualBlock, ZeroWeightsWithProjectionIsZero) {
  ParameterStore<float> store(1);
  auto p = ResidualBlockParams<float>::create(store, "res", 3, 6);
  ASSERT_TRUE(p.projection.has_value());
  zero_all(store);
  Tensor<float> y = residual_block(random_tensor<float>(Shape{1, 3, 4, 4}, 3), p);
  ASSERT_EQ(y.shape(), (Shape{1, 6, 4, 4}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ResidualBlock, ManifestShapes) {
  ParameterStore<float> store(1);
  ResidualBlockParams<float>::create(store, "res", 3, 6);
  EXPECT_EQ(store.get("res.conv1.weight").shape(), (Shape{6, 3, 1, 1}));
  EXPECT_EQ(store.get("res.conv2.weight").shape(), (Shape{6, 6, 3, 3}));
  EXPECT_EQ(store.get("res.proj.weight").shape(), (Shape{6, 3, 1, 1}));
  EXPECT_EQ(store.get("res.conv2.bias").shape(), (Shape{1, 6, 1, 1}));
}

TEST(ResidualBlock, ChannelMismatchThrows) {
  ParameterStore<float> store(1);
  auto p = ResidualBlockParams<float>::create(store, "res", 3, 6);
  EXPECT_THROW(residual_block(Tensor<float>(Shape{1, 4, 4, 4}), p), DimensionError);
}

TEST(ResidualBlock, GradientMatchesFiniteDifferences) {
  ParameterStore<double> store(5);
  auto p = ResidualBlockParams<double>::create(store, "res", 3, 6);
  for (auto& e : store.entries())
    if (e.name.ends_with(".bias"))
      for (auto& v : e.value.mutable_data()) v = 0.05;
  Tensor<double> x = random_tensor(Shape{1, 3, 8, 8}, 6);
  auto inputs = params_of(store);
  inputs.push_back(x);
  const auto r = grad_check([&] { return probe(residual_block(x, p)); }, inputs, kBlockEps, 40);
  EXPECT_LT(r.max_rel_error, kBlockTol);
  EXPECT_GT(r.checked, 100u);
}

TEST(ConvRelu, ZeroWeightsAndShape) {
  ParameterStore<float> store(2);
  auto p = ConvParams<float>::create(store, "c", 3, 64, 3);
  Tensor<float> x = random_tensor<float>(Shape{1, 3, 256, 256}, 1);
  Tensor<float> y = conv_relu_block(x, p);
  EXPECT_EQ(y.shape(), (Shape{1, 64, 256, 256}));
  for (float v : y.data()) ASSERT_GE(v, 0.0f);
  zero_all(store);
  Tensor<float> z = conv_relu_block(x, p);
  for (float v : z.data()) ASSERT_EQ(v, 0.0f);
}

TEST(ConvRelu, Gradient) {
  ParameterStore<double> store(3);
  auto p = ConvParams<double>::create(store, "c", 2, 3, 3);
  Tensor<double> x = random_tensor(Shape{1, 2, 5, 5}, 4);
  auto inputs = params_of(store);
  inputs.push_back(x);
  EXPECT_LT(grad_check([&] { return probe(conv_relu_block(x, p)); }, inputs, kBlockEps).max_rel_error, kBlockTol);
}

TEST(Mlp, WidthsZeroAndGradient) {
  ParameterStore<double> store(4);
  auto p = MlpParams<double>::create(store, "mlp", 2);
  EXPECT_EQ(p.fc1.weight.shape(), (Shape{1, 1, 8, 2}));
  EXPECT_EQ(p.fc2.weight.shape(), (Shape{1, 1, 2, 8}));
  Tensor<double> tokens = random_tensor(Shape{3, 1, 4, 2}, 5);
  EXPECT_EQ(apply_linear(tokens, p.fc1).shape(), (Shape{3, 1, 4, 8}));
  auto inputs = params_of(store);
  inputs.push_back(tokens);
  EXPECT_LT(grad_check([&] { return probe(mlp(tokens, p)); }, inputs).max_rel_error, 1e-4);

  zero_all(store);
  Tensor<double> y = mlp(tokens, p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Parameters, InitIsDeterminedByNameAndSeed) {
  ParameterStore<float> a(42), b(42), c(43);
  Tensor<float> wa = a.add("layer.weight", Shape{4, 3, 3, 3}, Init::kaiming_normal, 27);
  Tensor<float> wb = b.add("layer.weight", Shape{4, 3, 3, 3}, Init::kaiming_normal, 27);
  Tensor<float> wc = c.add("layer.weight", Shape{4, 3, 3, 3}, Init::kaiming_normal, 27);
  b.add("other.weight", Shape{2, 2, 1, 1}, Init::kaiming_normal, 2);
  EXPECT_EQ(wa.vec(), wb.vec());
  EXPECT_NE(wa.vec(), wc.vec());
  EXPECT_THROW(a.add("layer.weight", Shape{1, 1, 1, 1}, Init::zeros), ValidationError);
  EXPECT_EQ(a.add("ones", Shape{1, 2, 1, 1}, Init::ones).vec(), (std::vector<float>{1, 1}));
}

TEST(Parameters, KaimingStatistics) {
  ParameterStore<double> s(7);
  Tensor<double> w = s.add("w", Shape{64, 64, 3, 3}, Init::kaiming_normal, 576);
  double m = 0, v = 0;
  for (double x : w.data()) m += x;
  m /= w.size();
  for (double x : w.data()) v += (x - m) * (x - m);
  v /= w.size();
  EXPECT_NEAR(m, 0.0, 0.003);
  EXPECT_NEAR(std::sqrt(v), std::sqrt(2.0 / 576), 0.002);
}
