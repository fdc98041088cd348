#pragma once

// 8-bit PNG I/O through libpng's simplified API, plus the resamplers used by loading and
// augmentation.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsca/metrics.hpp"
#include "rsca/tensor.hpp"

namespace rsca {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit pixels, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

inline Image read_png(const std::string& path, bool gray) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ImageError(path + ": " + img.message);
  }
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image out;
  out.height = img.height;
  out.width = img.width;
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  // Transparent pixels are composited onto black.
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&img, &background, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError(path + ": " + msg);
  }
  return out;
}

inline void write_png(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ImageError(path + ": only gray or RGB output");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError(path + ": " + img.message);
  }
}

/// (1, C, H, W) tensor with values in [0, 1].
inline Tensor<float> image_to_tensor(const Image& img, std::size_t channels) {
  Tensor<float> t(Shape{1, channels, img.height, img.width});
  auto d = t.mutable_data();
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t src_c = img.channels == 1 ? 0 : std::min(c, img.channels - 1);
    for (std::size_t i = 0; i < plane; ++i) d[c * plane + i] = img.pixels[i * img.channels + src_c] / 255.0f;
  }
  return t;
}

inline Mask image_to_mask(const Image& img, std::uint8_t threshold = 127) {
  Mask m(img.height, img.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.pixels[i] = img.pixels[i * img.channels] > threshold ? 1 : 0;
  return m;
}

inline Image mask_to_image(const Mask& m) {
  Image img{m.height, m.width, 1, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = m.pixels[i] ? 255 : 0;
  return img;
}

inline Image tensor_to_image(const Tensor<float>& t, std::size_t index = 0) {
  const Shape s = t.shape();
  Image img{s.h, s.w, s.c == 1 ? 1u : 3u, {}};
  img.pixels.resize(s.h * s.w * img.channels);
  const std::size_t plane = s.plane();
  const std::size_t base = index * s.c * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) {
      const float v = std::clamp(t[base + c * plane + i], 0.0f, 1.0f);
      img.pixels[i * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return img;
}

/// Bilinear resize with half-pixel centres and edge clamping, per channel of a (1, C, H, W) tensor.
inline Tensor<float> resize_bilinear(const Tensor<float>& src, std::size_t out_h, std::size_t out_w) {
  const Shape s = src.shape();
  if (s.h == out_h && s.w == out_w) return Tensor<float>(s, src.vec());
  Tensor<float> out(Shape{s.n, s.c, out_h, out_w});
  auto d = out.mutable_data();
  const double sy = static_cast<double>(s.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(out_w);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const float* in = src.data().data() + p * s.plane();
    float* o = d.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.h - 1));
      const auto y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, s.h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx =
            std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.w - 1));
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, s.w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = in[y0 * s.w + x0] * (1 - wx) + in[y0 * s.w + x1] * wx;
        const double bot = in[y1 * s.w + x0] * (1 - wx) + in[y1 * s.w + x1] * wx;
        o[y * out_w + x] = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

inline Mask resize_nearest(const Mask& src, std::size_t out_h, std::size_t out_w) {
  if (src.height == out_h && src.width == out_w) return src;
  Mask out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t yy = std::min(src.height - 1, y * src.height / out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      out.at(y, x) = src.at(yy, std::min(src.width - 1, x * src.width / out_w));
    }
  }
  return out;
}

inline Tensor<float> mask_to_tensor(const Mask& m) {
  Tensor<float> t(Shape{1, 1, m.height, m.width});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) d[i] = m.pixels[i] ? 1.0f : 0.0f;
  return t;
}

/// Input image with lesion pixels blended towards red.
inline Image overlay(const Image& base, const Mask& m, double alpha = 0.45) {
  if (base.height != m.height || base.width != m.width) throw DimensionError("overlay: mask size differs from image");
  Image out{base.height, base.width, 3, std::vector<std::uint8_t>(base.height * base.width * 3)};
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = base.pixels[i * base.channels + (base.channels == 1 ? 0 : c)];
      const double tint = c == 0 ? 255.0 : 0.0;
      out.pixels[i * 3 + c] =
          static_cast<std::uint8_t>(std::lround(m.pixels[i] ? (1 - alpha) * v + alpha * tint : v));
    }
  }
  return out;
}

}  // namespace rsca
