#pragma once

// Residual-SwinCA-Net: residual CNN stages and Swin stages on the encoder side, MSCAS-refined
// skips and residual fusion on the decoder side, and a pixel-attention head.

#include <array>
#include <string>
#include <vector>

#include "rsca/blocks.hpp"
#include "rsca/config.hpp"
#include "rsca/parameter.hpp"
#include "rsca/refinement.hpp"
#include "rsca/swin.hpp"

namespace rsca {

template <class T>
struct ForwardResult {
  std::array<Tensor<T>, 4> encoder;  // stage outputs after LoG and pooling
  Tensor<T> probabilities;           // (n, 1, H, W), sigmoid output
};

/// Expected shapes for a batch of n at this config: four encoder outputs then the final map.
inline std::vector<Shape> shape_schedule(const ModelConfig& config, std::size_t n = 1) {
  config.validate();
  std::vector<Shape> out;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t r = config.stage_output_resolution(s);
    out.push_back(Shape{n, config.channels(s), r, r});
  }
  out.push_back(Shape{n, 1, config.input(), config.input()});
  return out;
}

template <class T>
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m(config, seed);
    ParameterStore<T>& st = m.store_;
    const std::size_t c1 = config.channels(0), c2 = config.channels(1), c3 = config.channels(2),
                      c4 = config.channels(3);

    m.enc1_res_ = ResidualBlockParams<T>::create(st, "enc1.res", config.input_channels, c1);
    m.enc1_conv_ = ConvParams<T>::create(st, "enc1.conv", c1, c1, 3);
    m.enc2_res_ = ResidualBlockParams<T>::create(st, "enc2.res", c1, c2);
    m.enc2_conv_ = ConvParams<T>::create(st, "enc2.conv", c2, c2, 3);

    m.enc3_proj_ = ConvParams<T>::create(st, "enc3.proj", c2, c3, 1);
    m.enc4_proj_ = ConvParams<T>::create(st, "enc4.proj", c3, c4, 1);
    for (std::size_t b = 0; b < config.swin_blocks_per_stage; ++b) {
      m.enc3_swin_.push_back(SwinBlockParams<T>::create(st, "enc3.swin" + std::to_string(b), c3, config.heads,
                                                        config.window, config.relative_position_bias));
    }
    for (std::size_t b = 0; b < config.swin_blocks_per_stage; ++b) {
      m.enc4_swin_.push_back(SwinBlockParams<T>::create(st, "enc4.swin" + std::to_string(b), c4, config.heads,
                                                        config.window, config.relative_position_bias));
    }

    m.dec3_mscas_ = MscasParams<T>::create(st, "dec3.mscas", c3);
    m.dec3_res_ = ResidualBlockParams<T>::create(st, "dec3.res", c3 + c4, c3);
    m.dec2_mscas_ = MscasParams<T>::create(st, "dec2.mscas", c2);
    m.dec2_res_ = ResidualBlockParams<T>::create(st, "dec2.res", c2 + c3, c2);
    m.dec1_mscas_ = MscasParams<T>::create(st, "dec1.mscas", c1);
    m.dec1_res_ = ResidualBlockParams<T>::create(st, "dec1.res", c1 + c2, c1);

    const std::size_t f = config.final_filters();
    m.head_conv_ = ConvParams<T>::create(st, "head.conv", c1, f, 3);
    m.head_pa_ = PixelAttentionParams<T>::create(st, "head.pa", f);
    m.head_out_ = ConvParams<T>::create(st, "head.out", f, 1, 1);
    return m;
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  /// Full forward pass. Samples interact only through the batch statistics inside MSCAS.
  ForwardResult<T> forward_full(const Tensor<T>& batch) const {
    const std::size_t in = config_.input();
    const Shape bs = batch.shape();
    if (bs.c != config_.input_channels || bs.h != in || bs.w != in) {
      throw DimensionError("forward: expected (N," + std::to_string(config_.input_channels) + "," +
                           std::to_string(in) + "," + std::to_string(in) + "), got " + bs.str());
    }
    ForwardResult<T> r;
    const auto& pools = config_.stage_pool;

    Tensor<T> x = conv_relu_block(residual_block(batch, enc1_res_), enc1_conv_);
    r.encoder[0] = pool2d(log_enhance(x), pools[0]);
    x = conv_relu_block(residual_block(r.encoder[0], enc2_res_), enc2_conv_);
    r.encoder[1] = pool2d(log_enhance(x), pools[1]);

    x = apply_conv(r.encoder[1], enc3_proj_);
    for (std::size_t b = 0; b < enc3_swin_.size(); ++b) x = swin_block(x, b, enc3_swin_[b]);
    r.encoder[2] = pool2d(log_enhance(x), pools[2]);
    x = apply_conv(r.encoder[2], enc4_proj_);
    for (std::size_t b = 0; b < enc4_swin_.size(); ++b) x = swin_block(x, b, enc4_swin_[b]);
    r.encoder[3] = pool2d(log_enhance(x), pools[3]);

    Tensor<T> d = decode(r.encoder[3], r.encoder[2], dec3_mscas_, dec3_res_);
    d = decode(d, r.encoder[1], dec2_mscas_, dec2_res_);
    d = decode(d, r.encoder[0], dec1_mscas_, dec1_res_);

    Tensor<T> u = upsample2x(conv_relu_block(d, head_conv_));
    Tensor<T> attended = pixel_attention(log_enhance(u), u, head_pa_).out;
    r.probabilities = sigmoid(apply_conv(attended, head_out_));
    return r;
  }

  Tensor<T> forward(const Tensor<T>& batch) const { return forward_full(batch).probabilities; }

 private:
  Model(const ModelConfig& config, std::uint64_t seed) : config_(config), seed_(seed), store_(seed) {}

  static Tensor<T> decode(const Tensor<T>& deeper, const Tensor<T>& skip, const MscasParams<T>& attn,
                          const ResidualBlockParams<T>& fuse) {
    Tensor<T> refined = mscas_skip(skip, attn).refined;
    return residual_block(concat_channels(refined, upsample2x(deeper)), fuse);
  }

  ModelConfig config_;
  std::uint64_t seed_;
  ParameterStore<T> store_;

  ResidualBlockParams<T> enc1_res_;
  ConvParams<T> enc1_conv_;
  ResidualBlockParams<T> enc2_res_;
  ConvParams<T> enc2_conv_;
  ConvParams<T> enc3_proj_;
  std::vector<SwinBlockParams<T>> enc3_swin_;
  ConvParams<T> enc4_proj_;
  std::vector<SwinBlockParams<T>> enc4_swin_;
  MscasParams<T> dec3_mscas_;
  ResidualBlockParams<T> dec3_res_;
  MscasParams<T> dec2_mscas_;
  ResidualBlockParams<T> dec2_res_;
  MscasParams<T> dec1_mscas_;
  ResidualBlockParams<T> dec1_res_;
  ConvParams<T> head_conv_;
  PixelAttentionParams<T> head_pa_;
  ConvParams<T> head_out_;
};

}  // namespace rsca
