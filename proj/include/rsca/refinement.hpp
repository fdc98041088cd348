#pragma once

// Feature refinement: the Laplacian-of-Gaussian regional operator, multi-scale channel
// attention and squeezing (MSCAS), and pixel attention.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rsca/blocks.hpp"
#include "rsca/ops.hpp"
#include "rsca/parameter.hpp"

namespace rsca {

inline constexpr std::size_t kLogSize = 5;
inline constexpr double kLogSigma = 1.0;

/// 5x5 Laplacian-of-Gaussian, sigma 1, shifted to sum to zero. Row-major.
inline std::array<double, kLogSize * kLogSize> log_kernel() {
  std::array<double, kLogSize * kLogSize> k{};
  const double s2 = kLogSigma * kLogSigma;
  const int r = static_cast<int>(kLogSize / 2);
  double total = 0.0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double d2 = static_cast<double>(x * x + y * y);
      const double g = std::exp(-d2 / (2.0 * s2)) / (2.0 * std::numbers::pi * s2);
      const double v = (d2 - 2.0 * s2) / (s2 * s2) * g;
      k[static_cast<std::size_t>((y + r) * static_cast<int>(kLogSize) + (x + r))] = v;
      total += v;
    }
  }
  const double mean = total / static_cast<double>(k.size());
  for (double& v : k) v -= mean;
  return k;
}

/// Depthwise LoG response with the shared kernel; replicate padding so constant maps give zero.
template <class T>
Tensor<T> log_response(const Tensor<T>& x) {
  const auto kd = log_kernel();
  std::array<T, kLogSize * kLogSize> kernel{};
  for (std::size_t i = 0; i < kd.size(); ++i) kernel[i] = static_cast<T>(kd[i]);
  const Shape s = x.shape();
  constexpr std::size_t r = kLogSize / 2;
  const std::size_t pw = s.w + 2 * r, ph = s.h + 2 * r;
  // Padded row/column index -> source index under edge replication.
  auto src_index = [](std::size_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(r), 0,
                                                               static_cast<std::ptrdiff_t>(n) - 1));
  };
  Buffer<T> out(s.size(), T(0));
  Buffer<T> pad(ph * pw);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x.data().data() + p * s.plane();
    for (std::size_t y = 0; y < ph; ++y) {
      const T* row = src + src_index(y, s.h) * s.w;
      T* prow = pad.data() + y * pw;
      for (std::size_t xx = 0; xx < pw; ++xx) prow[xx] = row[src_index(xx, s.w)];
    }
    T* dst = out.data() + p * s.plane();
    for (std::size_t y = 0; y < s.h; ++y) {
      T* orow = dst + y * s.w;
      for (std::size_t ky = 0; ky < kLogSize; ++ky) {
        const T* prow = pad.data() + (y + ky) * pw;
        for (std::size_t kx = 0; kx < kLogSize; ++kx) {
          const T k = kernel[ky * kLogSize + kx];
          const T* in = prow + kx;
          for (std::size_t xx = 0; xx < s.w; ++xx) orow[xx] += k * in[xx];
        }
      }
    }
  }
  return Tensor<T>::make_result(s, std::move(out), {x}, [x, kernel, src_index](const Node<T>& o) {
    T* g = grad_sink(x);
    if (!g) return;
    const Shape s = x.shape();
    const std::size_t pw = s.w + 2 * r, ph = s.h + 2 * r;
    Buffer<T> gpad(ph * pw);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      std::fill(gpad.begin(), gpad.end(), T(0));
      const T* go = o.grad.data() + p * s.plane();
      for (std::size_t y = 0; y < s.h; ++y) {
        const T* grow = go + y * s.w;
        for (std::size_t ky = 0; ky < kLogSize; ++ky) {
          T* prow = gpad.data() + (y + ky) * pw;
          for (std::size_t kx = 0; kx < kLogSize; ++kx) {
            const T k = kernel[ky * kLogSize + kx];
            T* dst = prow + kx;
            for (std::size_t xx = 0; xx < s.w; ++xx) dst[xx] += k * grow[xx];
          }
        }
      }
      T* dst = g + p * s.plane();
      for (std::size_t y = 0; y < ph; ++y) {
        T* row = dst + src_index(y, s.h) * s.w;
        const T* prow = gpad.data() + y * pw;
        for (std::size_t xx = 0; xx < pw; ++xx) row[src_index(xx, s.w)] += prow[xx];
      }
    }
  });
}

/// y = x + LoG(x): edges and blobs are accentuated, constant regions pass through unchanged.
template <class T>
Tensor<T> log_enhance(const Tensor<T>& x) {
  return add(x, log_response(x));
}

// ---------------------------------------------------------------------------
// MSCAS

template <class T>
struct MscasParams {
  ConvParams<T> squeeze;  // 2C -> C, 1x1
  Tensor<T> bn_gamma;
  Tensor<T> bn_beta;
  LinearParams<T> fc;  // C -> C

  static MscasParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t channels) {
    MscasParams p;
    p.squeeze = ConvParams<T>::create(store, prefix + ".squeeze", 2 * channels, channels, 1);
    p.bn_gamma = store.add(prefix + ".bn.gamma", Shape{1, channels, 1, 1}, Init::ones);
    p.bn_beta = store.add(prefix + ".bn.beta", Shape{1, channels, 1, 1}, Init::zeros);
    p.fc = LinearParams<T>::create(store, prefix + ".fc", channels, channels);
    return p;
  }
};

template <class T>
struct MscasOutput {
  Tensor<T> refined;   // F_ref = (C * s) (.) X_s
  Tensor<T> squeezed;  // X_s = BN(w_1x1 * concat(x_b, x_g))
  Tensor<T> weights;   // s, (n, 1, 1, C), each row a probability vector
};

/// Fuses a boundary stream and a global stream, squeezes to C channels, and reweights each channel
/// by C times its softmax attention weight (so uniform attention leaves the squeezed map unchanged).
/// Normalization always uses the statistics of the current batch.
template <class T>
MscasOutput<T> mscas(const Tensor<T>& x_global, const Tensor<T>& x_boundary, const MscasParams<T>& p) {
  require_same_shape(x_global.shape(), x_boundary.shape(), "mscas");
  const Shape s = x_global.shape();
  if (2 * s.c != p.squeeze.in_channels()) {
    throw DimensionError("mscas: streams " + s.str() + " do not match squeeze width " +
                         std::to_string(p.squeeze.in_channels()));
  }
  Tensor<T> fused = concat_channels(x_boundary, x_global);
  RunningStats<T> scratch{Tensor<T>(Shape{1, s.c, 1, 1}, T(0)), Tensor<T>(Shape{1, s.c, 1, 1}, T(1))};
  Tensor<T> squeezed = batch_norm(apply_conv(fused, p.squeeze), p.bn_gamma, p.bn_beta, scratch, true);
  Tensor<T> descriptor = reshape(global_avg_pool(squeezed), Shape{s.n, 1, 1, s.c});
  Tensor<T> logits = apply_linear(descriptor, p.fc);
  Tensor<T> weights = softmax(logits);
  Tensor<T> channel_scale = reshape(softmax(logits, static_cast<T>(s.c)), Shape{s.n, s.c, 1, 1});
  return {scale_channels(squeezed, channel_scale), squeezed, weights};
}

/// MSCAS applied to an encoder skip: global stream is the map itself, boundary stream its LoG response.
template <class T>
MscasOutput<T> mscas_skip(const Tensor<T>& skip, const MscasParams<T>& p) {
  return mscas(skip, log_response(skip), p);
}

// ---------------------------------------------------------------------------
// Pixel attention

template <class T>
struct PixelAttentionParams {
  Tensor<T> m1;  // (C, C, 1, 1)
  Tensor<T> m2;  // (C, C, 1, 1)
  Tensor<T> b1;  // (1, C, 1, 1)
  Tensor<T> g;   // (1, C, 1, 1)
  Tensor<T> b2;  // (1, 1, 1, 1)

  static PixelAttentionParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t channels) {
    PixelAttentionParams p;
    p.m1 = store.add(prefix + ".m1", Shape{channels, channels, 1, 1}, Init::kaiming_normal, channels);
    p.m2 = store.add(prefix + ".m2", Shape{channels, channels, 1, 1}, Init::kaiming_normal, channels);
    p.b1 = store.add(prefix + ".b1", Shape{1, channels, 1, 1}, Init::zeros);
    p.g = store.add(prefix + ".g", Shape{1, channels, 1, 1}, Init::kaiming_normal, channels);
    p.b2 = store.add(prefix + ".b2", Shape{1, 1, 1, 1}, Init::zeros);
    return p;
  }
};

template <class T>
struct PixelAttentionOutput {
  Tensor<T> out;  // M_p (.) Z_enh
  Tensor<T> map;  // M_p, (n, 1, h, w) in [0, 1]
};

/// h = relu(M1 Z + M2 S + b1); M_p = sigmoid(g h + b2); out = M_p broadcast over the channels of Z.
template <class T>
PixelAttentionOutput<T> pixel_attention(const Tensor<T>& z_enh, const Tensor<T>& s_mn,
                                        const PixelAttentionParams<T>& p) {
  require_same_shape(z_enh.shape(), s_mn.shape(), "pixel_attention");
  if (z_enh.shape().c != p.m1.shape().c) {
    throw DimensionError("pixel_attention: input " + z_enh.shape().str() + " does not match params");
  }
  Tensor<T> hidden = relu(add(conv2d(z_enh, p.m1, p.b1), conv2d(s_mn, p.m2)));
  Tensor<T> map = sigmoid(conv2d(hidden, p.g, p.b2));
  return {gate_pixels(z_enh, map), map};
}

}  // namespace rsca
