#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "rsca/rsca.hpp"

namespace rsca::test {

template <class T = double>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(s.size());
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>(s, std::move(v));
}

/// Values spread so that no two are within `gap` of each other (keeps max/relu away from ties and kinks).
inline Tensor<double> spread_tensor(Shape s, std::uint64_t seed, double gap = 0.05) {
  std::vector<double> v(s.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (static_cast<double>(i) - v.size() / 2.0 + 0.5) * gap;
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor<double>(s, std::move(v));
}

/// Weighted sum with fixed pseudo-random weights: a scalar loss that exercises every output element.
template <class T>
Tensor<T> probe(const Tensor<T>& y, std::uint64_t seed = 99) {
  Tensor<T> w = random_tensor<T>(y.shape(), seed, -1.0, 1.0);
  return sum(mul(y, w));
}

/// Direct-loop convolution, NCHW input, OIHW weights, zero padding.
inline std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                                      std::size_t stride, std::size_t pad, Shape& out_shape) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::size_t ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  out_shape = Shape{xs.n, ws.n, oh, ow};
  std::vector<double> out(out_shape.size(), 0.0);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(xs.h) || ix >= static_cast<long>(xs.w)) continue;
                acc += x.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
          out[((n * ws.n + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Owning copy of a tensor's values; safe to iterate when the tensor is a temporary.
template <class T>
std::vector<T> values(const Tensor<T>& t) {
  return t.vec();
}

}  // namespace rsca::test
