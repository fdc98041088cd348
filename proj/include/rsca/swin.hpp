#pragma once

// Window partitioning, (shifted-)window multi-head self-attention and the Swin block.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "rsca/blocks.hpp"
#include "rsca/ops.hpp"
#include "rsca/parameter.hpp"

namespace rsca {

struct WindowGrid {
  std::size_t window = 1;  // M, tokens per side
  std::size_t grid_h = 1;
  std::size_t grid_w = 1;
  std::size_t shift = 0;

  std::size_t windows() const { return grid_h * grid_w; }
  std::size_t tokens() const { return window * window; }

  static WindowGrid make(std::size_t h, std::size_t w, std::size_t window, std::size_t shift) {
    if (window == 0 || h % window != 0 || w % window != 0) {
      throw DimensionError("window_partition: " + std::to_string(h) + "x" + std::to_string(w) +
                           " is not divisible by window " + std::to_string(window));
    }
    if (shift >= window) throw DimensionError("window_partition: shift must be smaller than the window");
    return {window, h / window, w / window, shift};
  }

  /// Shift used by the block at this depth: 0 on even indices, floor(M/2) on odd ones.
  static std::size_t shift_for_block(std::size_t block_index, std::size_t window) {
    return block_index % 2 == 0 ? 0 : window / 2;
  }
};

/// Token pairs that must not attend to each other inside a shifted window, indexed
/// [window-in-image][query][key]. Empty when the grid is not shifted.
struct WindowMask {
  std::size_t windows = 0;
  std::size_t tokens = 0;
  std::vector<std::uint8_t> blocked;

  bool empty() const { return blocked.empty(); }
  bool is_blocked(std::size_t window, std::size_t q, std::size_t k) const {
    return !blocked.empty() && blocked[(window * tokens + q) * tokens + k] != 0;
  }
};

/// Two tokens of a rolled window may attend to each other only if they were within one window
/// span of each other before the cyclic roll, i.e. neither pair coordinate wrapped around the border.
inline WindowMask shifted_window_mask(std::size_t h, std::size_t w, const WindowGrid& grid) {
  WindowMask mask;
  mask.windows = grid.windows();
  mask.tokens = grid.tokens();
  if (grid.shift == 0) return mask;
  const std::size_t m = grid.window;
  mask.blocked.assign(mask.windows * mask.tokens * mask.tokens, 0);
  auto origin = [&](std::size_t win, std::size_t t) {
    const std::size_t y = (win / grid.grid_w) * m + t / m;
    const std::size_t x = (win % grid.grid_w) * m + t % m;
    return std::pair<std::ptrdiff_t, std::ptrdiff_t>{static_cast<std::ptrdiff_t>((y + grid.shift) % h),
                                                     static_cast<std::ptrdiff_t>((x + grid.shift) % w)};
  };
  for (std::size_t win = 0; win < mask.windows; ++win) {
    for (std::size_t q = 0; q < mask.tokens; ++q) {
      const auto [qy, qx] = origin(win, q);
      for (std::size_t k = 0; k < mask.tokens; ++k) {
        const auto [ky, kx] = origin(win, k);
        const bool apart = std::abs(qy - ky) >= static_cast<std::ptrdiff_t>(m) ||
                           std::abs(qx - kx) >= static_cast<std::ptrdiff_t>(m);
        mask.blocked[(win * mask.tokens + q) * mask.tokens + k] = apart ? 1 : 0;
      }
    }
  }
  return mask;
}

namespace detail {

/// Source offset in the (n,c,h,w) map for every element of the (n*windows, 1, M*M, c) token layout.
inline std::vector<std::size_t> window_index(const Shape& s, const WindowGrid& g) {
  const std::size_t m = g.window;
  const std::size_t t = g.tokens();
  std::vector<std::size_t> index(s.size());
  std::size_t i = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t wi = 0; wi < g.grid_h; ++wi) {
      for (std::size_t wj = 0; wj < g.grid_w; ++wj) {
        for (std::size_t tok = 0; tok < t; ++tok) {
          const std::size_t y = (wi * m + tok / m + g.shift) % s.h;
          const std::size_t x = (wj * m + tok % m + g.shift) % s.w;
          for (std::size_t ch = 0; ch < s.c; ++ch) index[i++] = ((n * s.c + ch) * s.h + y) * s.w + x;
        }
      }
    }
  }
  return index;
}

}  // namespace detail

template <class T>
struct Windows {
  Tensor<T> tokens;  // (n * windows, 1, M*M, c)
  WindowGrid grid;
  WindowMask mask;
  Shape source;
};

/// Cyclic roll by (-shift, -shift) followed by partition into non-overlapping M x M windows.
template <class T>
Windows<T> window_partition(const Tensor<T>& x, std::size_t window, std::size_t shift) {
  const Shape s = x.shape();
  const WindowGrid grid = WindowGrid::make(s.h, s.w, window, shift);
  const Shape ts{s.n * grid.windows(), 1, grid.tokens(), s.c};
  return {gather(x, ts, detail::window_index(s, grid)), grid, shifted_window_mask(s.h, s.w, grid), s};
}

/// Exact inverse of window_partition.
template <class T>
Tensor<T> window_reverse(const Tensor<T>& tokens, const WindowGrid& grid, const Shape& source) {
  const Shape expected{source.n * grid.windows(), 1, grid.tokens(), source.c};
  require_same_shape(tokens.shape(), expected, "window_reverse");
  const std::vector<std::size_t> forward = detail::window_index(source, grid);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return gather(tokens, source, std::move(inverse));
}

/// Scaled dot-product attention inside each window, per head:
/// softmax(Q K^T / sqrt(d) + bias, masked) V, heads concatenated along the channel axis.
/// rel_bias, when defined, is a (1, heads, (2M-1), (2M-1)) table indexed by relative offset.
template <class T>
Tensor<T> window_attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                                const WindowMask& mask, const Tensor<T>& rel_bias = Tensor<T>{}) {
  require_same_shape(q.shape(), k.shape(), "attention");
  require_same_shape(q.shape(), v.shape(), "attention");
  const Shape s = q.shape();
  const std::size_t batches = s.n * s.c;
  const std::size_t tokens = s.h;
  const std::size_t dim = s.w;
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(dim));
  }
  if (!mask.empty() && (mask.tokens != tokens || batches % mask.windows != 0)) {
    throw DimensionError("attention: mask does not match the window layout");
  }
  const std::size_t hd = dim / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(hd));
  const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens))));
  const std::size_t span = 2 * side - 1;
  if (rel_bias.defined() && !(rel_bias.shape() == Shape{1, heads, span, span})) {
    throw DimensionError("attention: relative bias table " + rel_bias.shape().str() + " does not fit");
  }
  auto bias_index = [side, span](std::size_t a, std::size_t b) {
    const std::size_t dy = a / side + side - 1 - b / side;
    const std::size_t dx = a % side + side - 1 - b % side;
    return dy * span + dx;
  };

  using Strided = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;
  using StridedMut = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;

  Buffer<T> out(s.size(), T(0));
  Buffer<T> probs(batches * heads * tokens * tokens);
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t win = mask.empty() ? 0 : b % mask.windows;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * tokens * dim + h * hd;
      Strided qh(q.data().data() + off, tokens, hd, Eigen::OuterStride<>(dim));
      Strided kh(k.data().data() + off, tokens, hd, Eigen::OuterStride<>(dim));
      Strided vh(v.data().data() + off, tokens, hd, Eigen::OuterStride<>(dim));
      MatMap<T> a(probs.data() + (b * heads + h) * tokens * tokens, tokens, tokens);
      a.noalias() = (qh * kh.transpose()) * scale_factor;
      for (std::size_t i = 0; i < tokens; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < tokens; ++j) {
          if (rel_bias.defined()) a(i, j) += rel_bias[h * span * span + bias_index(i, j)];
          if (mask.is_blocked(win, i, j)) continue;
          mx = std::max(mx, a(i, j));
        }
        T total = T(0);
        for (std::size_t j = 0; j < tokens; ++j) {
          a(i, j) = mask.is_blocked(win, i, j) ? T(0) : std::exp(a(i, j) - mx);
          total += a(i, j);
        }
        for (std::size_t j = 0; j < tokens; ++j) a(i, j) /= total;
      }
      StridedMut oh(out.data() + off, tokens, hd, Eigen::OuterStride<>(dim));
      oh.noalias() = a * vh;
    }
  }

  return Tensor<T>::make_result(
      s, std::move(out), {q, k, v, rel_bias},
      [q, k, v, rel_bias, heads, batches, tokens, dim, hd, scale_factor, span, bias_index,
       probs = std::move(probs)](const Node<T>& o) {
        T* gq = grad_sink(q);
        T* gk = grad_sink(k);
        T* gv = grad_sink(v);
        T* gbias = grad_sink(rel_bias);
        RowMatrix<T> da(tokens, tokens);
        RowMatrix<T> ds(tokens, tokens);
        for (std::size_t b = 0; b < batches; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * tokens * dim + h * hd;
            Strided qh(q.data().data() + off, tokens, hd, Eigen::OuterStride<>(dim));
            Strided kh(k.data().data() + off, tokens, hd, Eigen::OuterStride<>(dim));
            Strided vh(v.data().data() + off, tokens, hd, Eigen::OuterStride<>(dim));
            Strided go(o.grad.data() + off, tokens, hd, Eigen::OuterStride<>(dim));
            ConstMatMap<T> a(probs.data() + (b * heads + h) * tokens * tokens, tokens, tokens);
            if (gv) {
              StridedMut gvh(gv + off, tokens, hd, Eigen::OuterStride<>(dim));
              gvh.noalias() += a.transpose() * go;
            }
            if (!gq && !gk && !gbias) continue;
            da.noalias() = go * vh.transpose();
            for (std::size_t i = 0; i < tokens; ++i) {
              T dot = T(0);
              for (std::size_t j = 0; j < tokens; ++j) dot += da(i, j) * a(i, j);
              for (std::size_t j = 0; j < tokens; ++j) ds(i, j) = a(i, j) * (da(i, j) - dot);
            }
            if (gbias) {
              for (std::size_t i = 0; i < tokens; ++i)
                for (std::size_t j = 0; j < tokens; ++j) gbias[h * span * span + bias_index(i, j)] += ds(i, j);
            }
            if (gq) {
              StridedMut gqh(gq + off, tokens, hd, Eigen::OuterStride<>(dim));
              gqh.noalias() += (ds * kh) * scale_factor;
            }
            if (gk) {
              StridedMut gkh(gk + off, tokens, hd, Eigen::OuterStride<>(dim));
              gkh.noalias() += (ds.transpose() * qh) * scale_factor;
            }
          }
        }
      });
}

template <class T>
struct AttentionParams {
  std::size_t heads = 1;
  LinearParams<T> wq;
  LinearParams<T> wk;
  LinearParams<T> wv;
  LinearParams<T> wo;
  Tensor<T> rel_bias;  // undefined unless relative position bias is enabled

  static AttentionParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads, std::size_t window, bool relative_bias) {
    if (heads == 0 || dim % heads != 0) {
      throw ValidationError(prefix + ": " + std::to_string(heads) + " heads do not divide " + std::to_string(dim));
    }
    AttentionParams p;
    p.heads = heads;
    p.wq = LinearParams<T>::create(store, prefix + ".q", dim, dim);
    p.wk = LinearParams<T>::create(store, prefix + ".k", dim, dim);
    p.wv = LinearParams<T>::create(store, prefix + ".v", dim, dim);
    p.wo = LinearParams<T>::create(store, prefix + ".o", dim, dim);
    if (relative_bias) {
      const std::size_t span = 2 * window - 1;
      p.rel_bias = store.add(prefix + ".rel_bias", Shape{1, heads, span, span}, Init::zeros);
    }
    return p;
  }
};

/// Multi-head self-attention over window tokens (batch, 1, T, D), output-projected.
template <class T>
Tensor<T> attention(const Tensor<T>& tokens, const AttentionParams<T>& p, const WindowMask& mask) {
  if (tokens.shape().w != p.wq.weight.shape().w) {
    throw DimensionError("attention: token width " + std::to_string(tokens.shape().w) + " does not match projections");
  }
  Tensor<T> q = apply_linear(tokens, p.wq);
  Tensor<T> k = apply_linear(tokens, p.wk);
  Tensor<T> v = apply_linear(tokens, p.wv);
  return apply_linear(window_attention_core(q, k, v, p.heads, mask, p.rel_bias), p.wo);
}

template <class T>
struct SwinBlockParams {
  Tensor<T> ln1_gamma;
  Tensor<T> ln1_beta;
  AttentionParams<T> attn;
  Tensor<T> ln2_gamma;
  Tensor<T> ln2_beta;
  MlpParams<T> mlp;
  std::size_t window = 4;

  static SwinBlockParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads, std::size_t window, bool relative_bias = false) {
    SwinBlockParams p;
    p.ln1_gamma = store.add(prefix + ".ln1.gamma", Shape{1, 1, 1, dim}, Init::ones);
    p.ln1_beta = store.add(prefix + ".ln1.beta", Shape{1, 1, 1, dim}, Init::zeros);
    p.attn = AttentionParams<T>::create(store, prefix + ".attn", dim, heads, window, relative_bias);
    p.ln2_gamma = store.add(prefix + ".ln2.gamma", Shape{1, 1, 1, dim}, Init::ones);
    p.ln2_beta = store.add(prefix + ".ln2.beta", Shape{1, 1, 1, dim}, Init::zeros);
    p.mlp = MlpParams<T>::create(store, prefix + ".mlp", dim);
    p.window = window;
    return p;
  }
};

/// z' = W-MSA(LN(z)) + z ; z'' = MLP(LN(z')) + z', computed in the (shifted) window layout.
template <class T>
Tensor<T> swin_block(const Tensor<T>& x, std::size_t block_index, const SwinBlockParams<T>& p) {
  if (x.shape().c != p.ln1_gamma.size()) {
    throw DimensionError("swin_block: input " + x.shape().str() + " expects " + std::to_string(p.ln1_gamma.size()) +
                         " channels");
  }
  const std::size_t shift = WindowGrid::shift_for_block(block_index, p.window);
  Windows<T> win = window_partition(x, p.window, shift);
  Tensor<T> z = add(win.tokens, attention(layer_norm(win.tokens, p.ln1_gamma, p.ln1_beta), p.attn, win.mask));
  z = add(z, mlp(layer_norm(z, p.ln2_gamma, p.ln2_beta), p.mlp));
  return window_reverse(z, win.grid, win.source);
}

}  // namespace rsca
