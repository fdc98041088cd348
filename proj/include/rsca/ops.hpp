#pragma once

// Primitive differentiable operations. Every op returns a fresh tensor; backward closures
// accumulate into the gradient buffers of the inputs that require one.

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "rsca/tensor.hpp"

namespace rsca {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

enum class PoolMode { avg, max };
enum class Activation { relu, sigmoid, gelu };

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](const Node<T>& o) {
    for (const Tensor<T>* in : {&a, &b}) {
      if (T* g = grad_sink(*in)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](const Node<T>& o) {
    if (T* g = grad_sink(a)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (T* g = grad_sink(b)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](const Node<T>& o) {
    if (T* g = grad_sink(a)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * b[i];
    }
    if (T* g = grad_sink(b)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * a[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [a, factor](const Node<T>& o) {
    if (T* g = grad_sink(a)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

/// Sum of all elements as a (1,1,1,1) tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return Tensor<T>::make_result(Shape{}, {acc}, {a}, [a](const Node<T>& o) {
    if (T* g = grad_sink(a)) {
      for (std::size_t i = 0; i < a.size(); ++i) g[i] += o.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Same values under a new shape of equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape.size() != a.size()) {
    throw DimensionError("reshape: " + a.shape().str() + " cannot become " + shape.str());
  }
  return Tensor<T>::make_result(shape, Buffer<T>(a.data().begin(), a.data().end()), {a}, [a](const Node<T>& o) {
    if (T* g = grad_sink(a)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

/// out[i] = a[index[i]]; index must be a permutation when used as a layout change.
template <class T>
Tensor<T> gather(const Tensor<T>& a, Shape shape, std::vector<std::size_t> index) {
  if (index.size() != shape.size()) throw DimensionError("gather: index length does not match shape");
  Buffer<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = a[index[i]];
  return Tensor<T>::make_result(shape, std::move(out), {a},
                                [a, index = std::move(index)](const Node<T>& o) {
                                  if (T* g = grad_sink(a)) {
                                    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += o.grad[i];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

// Column buffers cover output rows [oy0, oy1); row (ch, ky, kx) of the buffer has (oy1 - oy0) * ow entries.
template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oy0, std::size_t oy1, std::size_t ow, T* col) {
  const std::size_t span = (oy1 - oy0) * ow;
  const auto sh = static_cast<std::ptrdiff_t>(h), sw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = col + ((ch * kh + ky) * kw + kx) * span;
        const auto off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
        // valid ox satisfy 0 <= ox * stride + off < w
        std::size_t lo = 0, hi = 0;
        while (lo < ow && static_cast<std::ptrdiff_t>(lo * stride) + off < 0) ++lo;
        hi = lo;
        while (hi < ow && static_cast<std::ptrdiff_t>(hi * stride) + off < sw) ++hi;
        for (std::size_t oy = oy0; oy < oy1; ++oy, row += ow) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= sh || lo >= hi) {
            std::fill(row, row + ow, T(0));
            continue;
          }
          const T* src = x + (ch * h + static_cast<std::size_t>(iy)) * w;
          std::fill(row, row + lo, T(0));
          if (stride == 1) {
            std::copy(src + lo + off, src + hi + off, row + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) row[ox] = src[static_cast<std::ptrdiff_t>(ox * stride) + off];
          }
          std::fill(row + hi, row + ow, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oy0, std::size_t oy1, std::size_t ow, T* dx) {
  const std::size_t span = (oy1 - oy0) * ow;
  const auto sh = static_cast<std::ptrdiff_t>(h), sw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = col + ((ch * kh + ky) * kw + kx) * span;
        const auto off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
        std::size_t lo = 0, hi = 0;
        while (lo < ow && static_cast<std::ptrdiff_t>(lo * stride) + off < 0) ++lo;
        hi = lo;
        while (hi < ow && static_cast<std::ptrdiff_t>(hi * stride) + off < sw) ++hi;
        for (std::size_t oy = oy0; oy < oy1; ++oy, row += ow) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= sh) continue;
          T* dst = dx + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox * stride) + off] += row[ox];
        }
      }
    }
  }
}

/// Output rows per im2col tile, sized so a column tile stays near 1M elements.
inline std::size_t conv_tile_rows(std::size_t k, std::size_t oh, std::size_t ow) {
  const std::size_t rows = (std::size_t{1} << 20) / std::max<std::size_t>(1, k * ow);
  return std::clamp<std::size_t>(rows, 1, oh);
}

}  // namespace detail

/// 2-D cross-correlation. weight is (outC, inC, kH, kW); bias, when defined, is (1, outC, 1, 1).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t pad = 0) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (xs.c != ws.c) {
    throw DimensionError("conv2d: input " + xs.str() + " does not match weight " + ws.str());
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (bias.defined() && bias.size() != ws.n) {
    throw DimensionError("conv2d: bias " + bias.shape().str() + " does not match weight " + ws.str());
  }
  if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
    throw DimensionError("conv2d: kernel " + ws.str() + " larger than padded input " + xs.str());
  }
  const std::size_t oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::size_t ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  const std::size_t k = ws.c * ws.h * ws.w;
  const std::size_t spatial = oh * ow;
  const bool pointwise = ws.h == 1 && ws.w == 1 && stride == 1 && pad == 0;
  const Shape os{xs.n, ws.n, oh, ow};

  Buffer<T> out(os.size());
  const std::size_t tile = detail::conv_tile_rows(k, oh, ow);
  Buffer<T> col(pointwise ? 0 : k * tile * ow);
  ConstMatMap<T> wmat(weight.data().data(), ws.n, k);
  for (std::size_t b = 0; b < xs.n; ++b) {
    const T* xb = x.data().data() + b * xs.c * xs.plane();
    MatMap<T> omat(out.data() + b * ws.n * spatial, ws.n, spatial);
    if (pointwise) {
      omat.noalias() = wmat * ConstMatMap<T>(xb, k, spatial);
    } else {
      for (std::size_t oy0 = 0; oy0 < oh; oy0 += tile) {
        const std::size_t oy1 = std::min(oh, oy0 + tile), n = (oy1 - oy0) * ow;
        detail::im2col(xb, xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, oy0, oy1, ow, col.data());
        omat.middleCols(oy0 * ow, n).noalias() = wmat * ConstMatMap<T>(col.data(), k, n);
      }
    }
    if (bias.defined()) {
      for (std::size_t oc = 0; oc < ws.n; ++oc) omat.row(oc).array() += bias[oc];
    }
  }

  return Tensor<T>::make_result(
      os, std::move(out), {x, weight, bias},
      [x, weight, bias, stride, pad, oh, ow, k, spatial, pointwise, tile](const Node<T>& o) {
        const Shape xs = x.shape();
        const Shape ws = weight.shape();
        T* gx = grad_sink(x);
        T* gw = grad_sink(weight);
        T* gb = grad_sink(bias);
        Buffer<T> col(pointwise || !gw ? 0 : k * tile * ow);
        Buffer<T> dcol(gx && !pointwise ? k * tile * ow : 0);
        ConstMatMap<T> wmat(weight.data().data(), ws.n, k);
        for (std::size_t b = 0; b < xs.n; ++b) {
          ConstMatMap<T> gout(o.grad.data() + b * ws.n * spatial, ws.n, spatial);
          const T* xb = x.data().data() + b * xs.c * xs.plane();
          T* gxb = gx ? gx + b * xs.c * xs.plane() : nullptr;
          if (gb) {
            // plain loop: an Eigen reduction's order depends on buffer alignment
            for (std::size_t oc = 0; oc < ws.n; ++oc) {
              const T* row = o.grad.data() + (b * ws.n + oc) * spatial;
              T acc = T(0);
              for (std::size_t i = 0; i < spatial; ++i) acc += row[i];
              gb[oc] += acc;
            }
          }
          if (pointwise) {
            if (gw) MatMap<T>(gw, ws.n, k).noalias() += gout * ConstMatMap<T>(xb, k, spatial).transpose();
            if (gx) MatMap<T>(gxb, k, spatial).noalias() += wmat.transpose() * gout;
            continue;
          }
          for (std::size_t oy0 = 0; oy0 < oh; oy0 += tile) {
            const std::size_t oy1 = std::min(oh, oy0 + tile), n = (oy1 - oy0) * ow;
            const auto gtile = gout.middleCols(oy0 * ow, n);
            if (gw) {
              detail::im2col(xb, xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, oy0, oy1, ow, col.data());
              MatMap<T>(gw, ws.n, k).noalias() += gtile * ConstMatMap<T>(col.data(), k, n).transpose();
            }
            if (gx) {
              MatMap<T> dmat(dcol.data(), k, n);
              dmat.noalias() = wmat.transpose() * gtile;
              detail::col2im(dcol.data(), xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, oy0, oy1, ow, gxb);
            }
          }
        }
      });
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride = 1, std::size_t pad = 0) {
  return conv2d(x, weight, Tensor<T>{}, stride, pad);
}

// ---------------------------------------------------------------------------
// Pooling and resampling

template <class T>
Tensor<T> pool2d(const Tensor<T>& x, PoolMode mode, std::size_t window = 2) {
  const Shape xs = x.shape();
  if (window == 0 || xs.h % window != 0 || xs.w % window != 0) {
    throw DimensionError("pool2d: spatial dims of " + xs.str() + " not divisible by window " +
                         std::to_string(window));
  }
  const Shape os{xs.n, xs.c, xs.h / window, xs.w / window};
  Buffer<T> out(os.size());
  std::vector<std::size_t> argmax(mode == PoolMode::max ? os.size() : 0);
  const T inv = T(1) / static_cast<T>(window * window);
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const T* src = x.data().data() + p * xs.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        const std::size_t oi = p * os.plane() + oy * os.w + ox;
        if (mode == PoolMode::avg) {
          T acc = T(0);
          for (std::size_t dy = 0; dy < window; ++dy)
            for (std::size_t dx = 0; dx < window; ++dx) acc += src[(oy * window + dy) * xs.w + ox * window + dx];
          out[oi] = acc * inv;
        } else {
          std::size_t best = (oy * window) * xs.w + ox * window;
          for (std::size_t dy = 0; dy < window; ++dy) {
            for (std::size_t dx = 0; dx < window; ++dx) {
              const std::size_t idx = (oy * window + dy) * xs.w + ox * window + dx;
              if (src[idx] > src[best]) best = idx;
            }
          }
          out[oi] = src[best];
          argmax[oi] = p * xs.plane() + best;
        }
      }
    }
  }
  return Tensor<T>::make_result(os, std::move(out), {x},
                                [x, mode, window, os, inv, argmax = std::move(argmax)](const Node<T>& o) {
                                  T* g = grad_sink(x);
                                  if (!g) return;
                                  if (mode == PoolMode::max) {
                                    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
                                    return;
                                  }
                                  const Shape xs = x.shape();
                                  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
                                    for (std::size_t y = 0; y < xs.h; ++y) {
                                      for (std::size_t xx = 0; xx < xs.w; ++xx) {
                                        g[p * xs.plane() + y * xs.w + xx] +=
                                            o.grad[p * os.plane() + (y / window) * os.w + xx / window] * inv;
                                      }
                                    }
                                  }
                                });
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const Shape xs = x.shape();
  const Shape os{xs.n, xs.c, xs.h * 2, xs.w * 2};
  Buffer<T> out(os.size());
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    for (std::size_t y = 0; y < os.h; ++y) {
      for (std::size_t xx = 0; xx < os.w; ++xx) {
        out[p * os.plane() + y * os.w + xx] = x[p * xs.plane() + (y / 2) * xs.w + xx / 2];
      }
    }
  }
  return Tensor<T>::make_result(os, std::move(out), {x}, [x, os](const Node<T>& o) {
    T* g = grad_sink(x);
    if (!g) return;
    const Shape xs = x.shape();
    for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t xx = 0; xx < os.w; ++xx) {
          g[p * xs.plane() + (y / 2) * xs.w + xx / 2] += o.grad[p * os.plane() + y * os.w + xx];
        }
      }
    }
  });
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw DimensionError("concat_channels: " + as.str() + " and " + bs.str() + " disagree on n/h/w");
  }
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  Buffer<T> out(os.size());
  const std::size_t na = as.c * as.plane();
  const std::size_t nb = bs.c * bs.plane();
  for (std::size_t n = 0; n < as.n; ++n) {
    std::copy_n(a.data().data() + n * na, na, out.data() + n * (na + nb));
    std::copy_n(b.data().data() + n * nb, nb, out.data() + n * (na + nb) + na);
  }
  return Tensor<T>::make_result(os, std::move(out), {a, b}, [a, b, na, nb](const Node<T>& o) {
    T* ga = grad_sink(a);
    T* gb = grad_sink(b);
    for (std::size_t n = 0; n < a.shape().n; ++n) {
      const T* src = o.grad.data() + n * (na + nb);
      if (ga)
        for (std::size_t i = 0; i < na; ++i) ga[n * na + i] += src[i];
      if (gb)
        for (std::size_t i = 0; i < nb; ++i) gb[n * nb + i] += src[na + i];
    }
  });
}

/// Per-channel spatial mean, (n,c,h,w) -> (n,c,1,1).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape xs = x.shape();
  const Shape os{xs.n, xs.c, 1, 1};
  Buffer<T> out(os.size());
  const T inv = T(1) / static_cast<T>(xs.plane());
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    T acc = T(0);
    for (std::size_t i = 0; i < xs.plane(); ++i) acc += x[p * xs.plane() + i];
    out[p] = acc * inv;
  }
  return Tensor<T>::make_result(os, std::move(out), {x}, [x, inv](const Node<T>& o) {
    T* g = grad_sink(x);
    if (!g) return;
    const std::size_t plane = x.shape().plane();
    for (std::size_t p = 0; p < o.grad.size(); ++p)
      for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += o.grad[p] * inv;
  });
}

/// x (n,c,h,w) times per-sample, per-channel weights (n,c,1,1).
template <class T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& weights) {
  const Shape xs = x.shape();
  if (!(weights.shape() == Shape{xs.n, xs.c, 1, 1})) {
    throw DimensionError("scale_channels: weights " + weights.shape().str() + " do not fit " + xs.str());
  }
  Buffer<T> out(xs.size());
  for (std::size_t p = 0; p < xs.n * xs.c; ++p)
    for (std::size_t i = 0; i < xs.plane(); ++i) out[p * xs.plane() + i] = x[p * xs.plane() + i] * weights[p];
  return Tensor<T>::make_result(xs, std::move(out), {x, weights}, [x, weights](const Node<T>& o) {
    const std::size_t plane = x.shape().plane();
    T* gx = grad_sink(x);
    T* gw = grad_sink(weights);
    for (std::size_t p = 0; p < weights.size(); ++p) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = p * plane + i;
        if (gx) gx[idx] += o.grad[idx] * weights[p];
        if (gw) gw[p] += o.grad[idx] * x[idx];
      }
    }
  });
}

/// x (n,c,h,w) times a single-channel gate (n,1,h,w) broadcast over channels.
template <class T>
Tensor<T> gate_pixels(const Tensor<T>& x, const Tensor<T>& gate) {
  const Shape xs = x.shape();
  if (!(gate.shape() == Shape{xs.n, 1, xs.h, xs.w})) {
    throw DimensionError("gate_pixels: gate " + gate.shape().str() + " does not fit " + xs.str());
  }
  Buffer<T> out(xs.size());
  const std::size_t plane = xs.plane();
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        out[(n * xs.c + c) * plane + i] = x[(n * xs.c + c) * plane + i] * gate[n * plane + i];
  return Tensor<T>::make_result(xs, std::move(out), {x, gate}, [x, gate](const Node<T>& o) {
    const Shape xs = x.shape();
    const std::size_t plane = xs.plane();
    T* gx = grad_sink(x);
    T* gg = grad_sink(gate);
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = (n * xs.c + c) * plane + i;
          if (gx) gx[idx] += o.grad[idx] * gate[n * plane + i];
          if (gg) gg[n * plane + i] += o.grad[idx] * x[idx];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization, projections, nonlinearities

/// Normalizes over the last axis (w); every other axis is treated as a token index.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t d = x.shape().w;
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: affine params " + gamma.shape().str() + " do not fit " + x.shape().str());
  }
  const std::size_t rows = x.size() / d;
  Buffer<T> out(x.size());
  Buffer<T> xhat(x.size());
  Buffer<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * d;
    T mu = T(0);
    for (std::size_t i = 0; i < d; ++i) mu += src[i];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (src[i] - mu) * is;
      out[r * d + i] = gamma[i] * xhat[r * d + i] + beta[i];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node<T>& o) {
        T* gx = grad_sink(x);
        T* gg = grad_sink(gamma);
        T* gb = grad_sink(beta);
        Buffer<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* go = o.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          T sum_d = T(0);
          T sum_dx = T(0);
          for (std::size_t i = 0; i < d; ++i) {
            if (gg) gg[i] += go[i] * xh[i];
            if (gb) gb[i] += go[i];
            dxhat[i] = go[i] * gamma[i];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * xh[i];
          }
          if (gx) {
            const T inv_d = T(1) / static_cast<T>(d);
            for (std::size_t i = 0; i < d; ++i) {
              gx[r * d + i] += inv_std[r] * (dxhat[i] - inv_d * sum_d - xh[i] * inv_d * sum_dx);
            }
          }
        }
      });
}

/// Running statistics owned by a batch-norm layer; shape (1,C,1,1) each.
template <class T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
};

/// Batch normalization over (n,h,w) per channel. In training mode the running statistics are
/// updated in place (unbiased variance, momentum-weighted). Eval mode before any training step
/// uses the initial statistics (mean 0, variance 1).
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, RunningStats<T>& stats,
                     bool training, T eps = T(1e-5), T momentum = T(0.1)) {
  const Shape xs = x.shape();
  if (gamma.size() != xs.c || beta.size() != xs.c || stats.mean.size() != xs.c || stats.var.size() != xs.c) {
    throw DimensionError("batch_norm: parameters do not match channels of " + xs.str());
  }
  const std::size_t plane = xs.plane();
  const std::size_t count = xs.n * plane;
  Buffer<T> mu(xs.c);
  Buffer<T> var(xs.c);
  if (training) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      T acc = T(0);
      for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t i = 0; i < plane; ++i) acc += x[(n * xs.c + c) * plane + i];
      mu[c] = acc / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t n = 0; n < xs.n; ++n) {
        for (std::size_t i = 0; i < plane; ++i) {
          const T dv = x[(n * xs.c + c) * plane + i] - mu[c];
          sq += dv * dv;
        }
      }
      var[c] = sq / static_cast<T>(count);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var[c];
      auto rm = stats.mean.mutable_data();
      auto rv = stats.var.mutable_data();
      rm[c] = (T(1) - momentum) * rm[c] + momentum * mu[c];
      rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < xs.c; ++c) {
      mu[c] = stats.mean[c];
      var[c] = stats.var[c];
    }
  }
  Buffer<T> inv_std(xs.c);
  for (std::size_t c = 0; c < xs.c; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);
  Buffer<T> xhat(xs.size());
  Buffer<T> out(xs.size());
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = (n * xs.c + c) * plane + i;
        xhat[idx] = (x[idx] - mu[c]) * inv_std[c];
        out[idx] = gamma[c] * xhat[idx] + beta[c];
      }
    }
  }
  return Tensor<T>::make_result(
      xs, std::move(out), {x, gamma, beta},
      [x, gamma, beta, training, count, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node<T>& o) {
        const Shape xs = x.shape();
        const std::size_t plane = xs.plane();
        T* gx = grad_sink(x);
        T* gg = grad_sink(gamma);
        T* gb = grad_sink(beta);
        for (std::size_t c = 0; c < xs.c; ++c) {
          T sum_d = T(0);
          T sum_dx = T(0);
          for (std::size_t n = 0; n < xs.n; ++n) {
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t idx = (n * xs.c + c) * plane + i;
              sum_d += o.grad[idx];
              sum_dx += o.grad[idx] * xhat[idx];
            }
          }
          if (gg) gg[c] += sum_dx;
          if (gb) gb[c] += sum_d;
          if (!gx) continue;
          const T scale_c = gamma[c] * inv_std[c];
          const T inv_count = T(1) / static_cast<T>(count);
          for (std::size_t n = 0; n < xs.n; ++n) {
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t idx = (n * xs.c + c) * plane + i;
              if (training) {
                gx[idx] += scale_c * (o.grad[idx] - inv_count * sum_d - xhat[idx] * inv_count * sum_dx);
              } else {
                gx[idx] += scale_c * o.grad[idx];
              }
            }
          }
        }
      });
}

/// y = x W^T + b applied along the last axis. weight is (1,1,Dout,Din); bias (1,1,1,Dout) or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::size_t din = x.shape().w;
  const std::size_t dout = weight.shape().h;
  if (weight.shape().w != din) {
    throw DimensionError("linear: input " + x.shape().str() + " does not match weight " + weight.shape().str());
  }
  if (bias.defined() && bias.size() != dout) {
    throw DimensionError("linear: bias " + bias.shape().str() + " does not match weight " + weight.shape().str());
  }
  const std::size_t rows = x.size() / din;
  Shape os = x.shape();
  os.w = dout;
  Buffer<T> out(os.size());
  ConstMatMap<T> xm(x.data().data(), rows, din);
  ConstMatMap<T> wm(weight.data().data(), dout, din);
  MatMap<T> om(out.data(), rows, dout);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < dout; ++j) om(r, j) += bias[j];
  }
  return Tensor<T>::make_result(os, std::move(out), {x, weight, bias}, [x, weight, bias, rows, din, dout](const Node<T>& o) {
    ConstMatMap<T> gout(o.grad.data(), rows, dout);
    if (T* gx = grad_sink(x)) {
      MatMap<T> gxm(gx, rows, din);
      gxm.noalias() += gout * ConstMatMap<T>(weight.data().data(), dout, din);
    }
    if (T* gw = grad_sink(weight)) {
      MatMap<T> gwm(gw, dout, din);
      gwm.noalias() += gout.transpose() * ConstMatMap<T>(x.data().data(), rows, din);
    }
    if (T* gb = grad_sink(bias)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < dout; ++j) gb[j] += gout(r, j);
    }
  });
}

/// Softmax along the last axis with max subtraction. The optional factor multiplies the
/// normalized output as factor * e_i / sum(e), so factor == K on a uniform row yields exactly 1.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, T factor = T(1)) {
  const std::size_t k = x.shape().w;
  const std::size_t rows = x.size() / k;
  Buffer<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * k;
    T mx = src[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, src[i]);
    T total = T(0);
    for (std::size_t i = 0; i < k; ++i) {
      out[r * k + i] = std::exp(src[i] - mx);
      total += out[r * k + i];
    }
    for (std::size_t i = 0; i < k; ++i) out[r * k + i] = factor * out[r * k + i] / total;
    assert(!std::isnan(total) && "softmax: NaN input");
  }
  Buffer<T> saved = out;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x},
                                [x, k, rows, factor, y = std::move(saved)](const Node<T>& o) {
                                  T* g = grad_sink(x);
                                  if (!g) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    T dot = T(0);
                                    for (std::size_t i = 0; i < k; ++i) dot += o.grad[r * k + i] * y[r * k + i];
                                    dot /= factor;
                                    for (std::size_t i = 0; i < k; ++i) {
                                      g[r * k + i] += y[r * k + i] * (o.grad[r * k + i] - dot);
                                    }
                                  }
                                });
}

namespace detail {

template <class T>
T sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace detail

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation kind) {
  const std::size_t n = x.size();
  Buffer<T> out(n);
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const T* in = x.data().data();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = detail::sigmoid(in[i]);
      break;
    case Activation::gelu: {
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> v(in, static_cast<Eigen::Index>(n));
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(out.data(), static_cast<Eigen::Index>(n)) =
          T(0.5) * v * (T(1) + (v * inv_sqrt2).erf());
      break;
    }
  }
  Buffer<T> saved = kind == Activation::sigmoid ? out : Buffer<T>{};
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [x, kind, y = std::move(saved)](const Node<T>& o) {
    T* g = grad_sink(x);
    if (!g) return;
    const T* in = x.data().data();
    const T* go = o.grad.data();
    const std::size_t n = o.grad.size();
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < n; ++i) g[i] += in[i] > T(0) ? go[i] : T(0);
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < n; ++i) g[i] += go[i] * (y[i] * (T(1) - y[i]));
        break;
      case Activation::gelu: {
        constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
        const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> v(in, static_cast<Eigen::Index>(n));
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> gv(go, static_cast<Eigen::Index>(n));
        Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(g, static_cast<Eigen::Index>(n)) +=
            gv * (T(0.5) * (T(1) + (v * inv_sqrt2).erf()) + v * inv_sqrt2pi * (T(-0.5) * v * v).exp());
        break;
      }
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return activate(x, Activation::relu);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activate(x, Activation::sigmoid);
}

}  // namespace rsca
