#include <gtest/gtest.h>

#include <algorithm>

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

/// Region labels of the rolled image as in the reference Swin implementation: three slices per
/// axis, [0, H-M), [H-M, H-s), [H-s, H).
std::vector<int> swin_region_labels(std::size_t h, std::size_t w, std::size_t m, std::size_t s) {
  auto slice = [m, s](std::size_t v, std::size_t n) { return v < n - m ? 0 : (v < n - s ? 1 : 2); };
  std::vector<int> labels(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) labels[y * w + x] = 3 * slice(y, h) + slice(x, w);
  return labels;
}

/// Direct loops: per window, per head, softmax(q k^T / sqrt(d)) v over unmasked keys.
std::vector<double> naive_attention(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                    std::size_t heads, const WindowMask& mask) {
  const Shape s = q.shape();
  const std::size_t T = s.h, D = s.w, hd = D / heads;
  std::vector<double> out(s.size(), 0.0);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> logits(T, -1e300);
        double mx = -1e300;
        for (std::size_t j = 0; j < T; ++j) {
          if (mask.is_blocked(b % std::max<std::size_t>(1, mask.windows), i, j)) continue;
          double dot = 0;
          for (std::size_t d = 0; d < hd; ++d) dot += q[(b * T + i) * D + h * hd + d] * k[(b * T + j) * D + h * hd + d];
          logits[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, logits[j]);
        }
        double total = 0;
        std::vector<double> p(T, 0.0);
        for (std::size_t j = 0; j < T; ++j)
          if (logits[j] > -1e300) total += (p[j] = std::exp(logits[j] - mx));
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t d = 0; d < hd; ++d) out[(b * T + i) * D + h * hd + d] += p[j] / total * v[(b * T + j) * D + h * hd + d];
      }
  return out;
}

}  // namespace

TEST(WindowPartition, IndexBookkeeping) {
  std::vector<float> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<float>(i);
  Tensor<float> x(Shape{1, 1, 4, 4}, v);
  auto w = window_partition(x, 2, 0);
  ASSERT_EQ(w.tokens.shape(), (Shape{4, 1, 4, 1}));
  EXPECT_EQ(std::vector<float>(w.tokens.data().begin(), w.tokens.data().begin() + 4), (std::vector<float>{0, 1, 4, 5}));
  EXPECT_EQ(std::vector<float>(w.tokens.data().begin() + 12, w.tokens.data().end()),
            (std::vector<float>{10, 11, 14, 15}));
  EXPECT_TRUE(w.mask.empty());
  // Shift 1 rolls by (-1, -1) first: the first window starts at original (1, 1).
  auto ws = window_partition(x, 2, 1);
  EXPECT_EQ(std::vector<float>(ws.tokens.data().begin(), ws.tokens.data().begin() + 4), (std::vector<float>{5, 6, 9, 10}));
  EXPECT_THROW(window_partition(Tensor<float>(Shape{1, 1, 6, 4}), 4, 0), DimensionError);
}

TEST(WindowPartition, ReverseRoundTripsBitwise) {
  for (std::size_t shift : {0u, 2u}) {
    Tensor<float> x = random_tensor<float>(Shape{2, 5, 8, 12}, 3 + shift);
    auto w = window_partition(x, 4, shift);
    EXPECT_EQ(window_reverse(w.tokens, w.grid, w.source).vec(), x.vec()) << "shift " << shift;
  }
}

TEST(WindowMask, MatchesReferenceRegionLabels) {
  for (auto [h, w, m] : {std::tuple{4u, 4u, 2u}, std::tuple{8u, 8u, 4u}, std::tuple{8u, 12u, 4u}}) {
    const std::size_t s = m / 2;
    const WindowGrid grid = WindowGrid::make(h, w, m, s);
    const WindowMask mask = shifted_window_mask(h, w, grid);
    const auto labels = swin_region_labels(h, w, m, s);
    std::size_t blocked = 0;
    for (std::size_t win = 0; win < grid.windows(); ++win)
      for (std::size_t q = 0; q < grid.tokens(); ++q)
        for (std::size_t k = 0; k < grid.tokens(); ++k) {
          auto label = [&](std::size_t t) {
            const std::size_t y = (win / grid.grid_w) * m + t / m, x = (win % grid.grid_w) * m + t % m;
            return labels[y * w + x];
          };
          EXPECT_EQ(mask.is_blocked(win, q, k), label(q) != label(k));
          blocked += mask.is_blocked(win, q, k);
        }
    EXPECT_GT(blocked, 0u);
  }
}

TEST(WindowMask, FourByFourShiftOneEnumeration) {
  // Brute force: two rolled tokens may interact iff they are contiguous in the original image,
  // i.e. neither coordinate difference wraps around the border.
  const WindowGrid grid = WindowGrid::make(4, 4, 2, 1);
  const WindowMask mask = shifted_window_mask(4, 4, grid);
  for (std::size_t win = 0; win < 4; ++win)
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t k = 0; k < 4; ++k) {
        auto orig = [&](std::size_t t) {
          return std::pair<int, int>{static_cast<int>(((win / 2) * 2 + t / 2 + 1) % 4),
                                     static_cast<int>(((win % 2) * 2 + t % 2 + 1) % 4)};
        };
        const auto [qy, qx] = orig(q);
        const auto [ky, kx] = orig(k);
        EXPECT_EQ(mask.is_blocked(win, q, k), std::abs(qy - ky) > 1 || std::abs(qx - kx) > 1);
      }
  // Window 0 never wraps; window 3 (bottom-right) wraps on both axes.
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_FALSE(mask.is_blocked(0, q, k));
  EXPECT_TRUE(mask.is_blocked(3, 0, 3));
}

TEST(Attention, CoreMatchesNaiveOracle) {
  for (std::size_t shift : {0u, 1u}) {
    const WindowGrid grid = WindowGrid::make(4, 4, 2, shift);
    const WindowMask mask = shifted_window_mask(4, 4, grid);
    Tensor<double> q = random_tensor(Shape{8, 1, 4, 6}, 1), k = random_tensor(Shape{8, 1, 4, 6}, 2),
                   v = random_tensor(Shape{8, 1, 4, 6}, 3);
    const auto ref = naive_attention(q, k, v, 2, mask);
    EXPECT_LT(test::max_abs_diff(window_attention_core(q, k, v, 2, mask).data(), ref), 1e-12);
  }
  // Eight-token windows, float path.
  Tensor<double> q = random_tensor(Shape{3, 1, 8, 4}, 4), k = random_tensor(Shape{3, 1, 8, 4}, 5),
                 v = random_tensor(Shape{3, 1, 8, 4}, 6);
  const auto ref = naive_attention(q, k, v, 2, WindowMask{});
  Tensor<float> out = window_attention_core(cast<float>(q), cast<float>(k), cast<float>(v), 2, WindowMask{});
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-5);
}

TEST(Attention, UniformQueryAveragesValues) {
  ParameterStore<double> store(1);
  auto p = AttentionParams<double>::create(store, "a", 4, 2, 2, false);
  for (auto& v : p.wq.weight.mutable_data()) v = 0;
  for (auto& v : p.wq.bias.mutable_data()) v = 0;
  Tensor<double> tokens = random_tensor(Shape{2, 1, 4, 4}, 2);
  Tensor<double> out = attention(tokens, p, WindowMask{});
  Tensor<double> vals = apply_linear(tokens, p.wv);
  std::vector<double> mean_v(2 * 4 * 4);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t d = 0; d < 4; ++d) {
        double m = 0;
        for (std::size_t j = 0; j < 4; ++j) m += vals[(b * 4 + j) * 4 + d];
        mean_v[(b * 4 + i) * 4 + d] = m / 4;
      }
  Tensor<double> expect = apply_linear(Tensor<double>(Shape{2, 1, 4, 4}, mean_v), p.wo);
  EXPECT_LT(test::max_abs_diff(out.data(), expect.data()), 1e-12);
}

TEST(Attention, SingleTokenPassesValues) {
  ParameterStore<double> store(2);
  auto p = AttentionParams<double>::create(store, "a", 4, 2, 1, false);
  Tensor<double> tokens = random_tensor(Shape{3, 1, 1, 4}, 3);
  Tensor<double> expect = apply_linear(apply_linear(tokens, p.wv), p.wo);
  EXPECT_LT(test::max_abs_diff(attention(tokens, p, WindowMask{}).data(), expect.data()), 1e-12);
}

TEST(Attention, RowsSumToOneUnderMask) {
  // With V rows all ones and an identity output projection, every output equals its attention row sum.
  ParameterStore<float> store(3);
  auto p = AttentionParams<float>::create(store, "a", 4, 2, 4, false);
  for (auto& v : p.wv.weight.mutable_data()) v = 0;
  for (auto& v : p.wv.bias.mutable_data()) v = 1;
  for (auto& v : p.wo.weight.mutable_data()) v = 0;
  for (std::size_t i = 0; i < 4; ++i) p.wo.weight.mutable_data()[i * 4 + i] = 1;
  Tensor<float> x = random_tensor<float>(Shape{1, 4, 8, 8}, 4, -3.0, 3.0);
  auto w = window_partition(x, 4, 2);
  Tensor<float> out = attention(w.tokens, p, w.mask);
  for (float v : out.data()) EXPECT_NEAR(v, 1.0f, 1e-6f);
}

TEST(Attention, WindowsAreIndependent) {
  ParameterStore<float> store(4);
  auto p = AttentionParams<float>::create(store, "a", 8, 2, 2, false);
  Tensor<float> tokens = random_tensor<float>(Shape{4, 1, 4, 8}, 5);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto permute = [&](const Tensor<float>& t) {
    std::vector<float> v(t.size());
    const std::size_t block = 4 * 8;
    for (std::size_t b = 0; b < 4; ++b)
      std::copy_n(t.data().begin() + perm[b] * block, block, v.begin() + b * block);
    return Tensor<float>(t.shape(), v);
  };
  EXPECT_EQ(attention(permute(tokens), p, WindowMask{}).vec(), permute(attention(tokens, p, WindowMask{})).vec());
}

TEST(Attention, GradientsIncludingMaskAndRelativeBias) {
  ParameterStore<double> store(5);
  auto p = AttentionParams<double>::create(store, "a", 4, 2, 2, true);
  for (auto& v : p.rel_bias.mutable_data()) v = 0.1 * (&v - p.rel_bias.mutable_data().data()) - 0.4;
  Tensor<double> x = random_tensor(Shape{1, 4, 4, 4}, 6);
  auto w = window_partition(x, 2, 1);
  auto inputs = store.trainable();
  inputs.push_back(w.tokens);
  const auto r = grad_check([&] { return probe(attention(w.tokens, p, w.mask)); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(SwinBlock, ZeroWeightsIsBitwiseIdentity) {
  ParameterStore<float> store(6);
  auto p = SwinBlockParams<float>::create(store, "s", 16, 4, 4);
  zero_all(store);
  Tensor<float> x = random_tensor<float>(Shape{2, 16, 8, 8}, 7);
  for (std::size_t b : {0u, 1u}) EXPECT_EQ(swin_block(x, b, p).vec(), x.vec()) << "block " << b;
}

TEST(SwinBlock, PreservesShape) {
  ParameterStore<float> store(7);
  auto p = SwinBlockParams<float>::create(store, "s", 256, 8, 4);
  Tensor<float> x = random_tensor<float>(Shape{1, 256, 32, 32}, 8);
  EXPECT_EQ(swin_block(x, 1, p).shape(), x.shape());
  EXPECT_THROW(swin_block(Tensor<float>(Shape{1, 128, 32, 32}), 0, p), DimensionError);
}

TEST(SwinBlock, ShiftAlternates) {
  EXPECT_EQ(WindowGrid::shift_for_block(0, 4), 0u);
  EXPECT_EQ(WindowGrid::shift_for_block(1, 4), 2u);
  EXPECT_EQ(WindowGrid::shift_for_block(2, 4), 0u);
  EXPECT_EQ(WindowGrid::shift_for_block(3, 5), 2u);
}

TEST(SwinBlock, GradientMatchesFiniteDifferences) {
  for (std::size_t block : {0u, 1u}) {
    ParameterStore<double> store(8 + block);
    auto p = SwinBlockParams<double>::create(store, "s", 4, 2, 2);
    for (auto& e : store.entries())
      if (e.name.ends_with("beta") || e.name.ends_with("bias"))
        for (auto& v : e.value.mutable_data()) v = 0.05;
    Tensor<double> x = random_tensor(Shape{1, 4, 4, 4}, 10);
    auto inputs = store.trainable();
    inputs.push_back(x);
    // eps 1e-5: the key bias has an exactly zero gradient, so a smaller step only measures rounding noise
    const auto r = grad_check([&] { return probe(swin_block(x, block, p)); }, inputs, 1e-5, 24);
    EXPECT_LT(r.max_rel_error, 1e-3) << "block " << block;
  }
}
