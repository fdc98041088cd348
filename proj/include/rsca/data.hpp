#pragma once

// Corpus loading, deterministic splitting, geometric augmentation and the synthetic
// ultrasound-like generator.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include "rsca/image.hpp"
#include "rsca/parameter.hpp"

namespace rsca {

namespace fs = std::filesystem;

struct Sample {
  std::string id;
  Tensor<float> image;  // (1, 3, H, W) in [0, 1]
  Tensor<float> mask;   // (1, 1, H, W) in {0, 1}
};

struct LoadReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
};

struct Corpus {
  std::vector<Sample> samples;
  LoadReport report;
};

namespace detail {

/// "x_mask" or "x_mask_3" -> "x"; anything else -> empty.
inline std::string mask_owner(const std::string& stem) {
  static const std::regex pattern(R"((.+)_mask(_[0-9]+)?)");
  std::smatch m;
  if (std::regex_match(stem, m, pattern)) return m[1].str();
  return {};
}

inline std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Reads root/images and root/masks (class subfolders flattened). Masks named <stem>_mask*.png
/// are OR-merged per image. Images are resized bilinearly to size×size, masks by nearest
/// neighbour after thresholding at 127. Problems are collected per file, never thrown.
inline Corpus load_corpus(const fs::path& root, std::size_t size) {
  Corpus corpus;
  auto& rep = corpus.report;
  const fs::path images_dir = root / "images";
  const fs::path masks_dir = root / "masks";
  if (!fs::is_directory(images_dir)) {
    rep.warnings.push_back("no images/ directory under " + root.string() + "; corpus is empty");
    return corpus;
  }

  std::map<std::string, fs::path> images;
  std::map<std::string, std::vector<fs::path>> masks;
  for (const auto& p : detail::png_files(images_dir)) {
    const std::string stem = p.stem().string();
    if (const std::string owner = detail::mask_owner(stem); !owner.empty()) {
      masks[owner].push_back(p);
      continue;
    }
    if (auto [it, inserted] = images.emplace(stem, p); !inserted) {
      rep.errors.push_back(p.string() + ": duplicate image id '" + stem + "' (also " + it->second.string() + ")");
    }
  }
  for (const auto& p : detail::png_files(masks_dir)) {
    const std::string owner = detail::mask_owner(p.stem().string());
    if (owner.empty()) {
      rep.warnings.push_back(p.string() + ": not named <stem>_mask*.png, ignored");
      continue;
    }
    masks[owner].push_back(p);
  }
  if (images.empty()) rep.warnings.push_back("no PNG images under " + images_dir.string() + "; corpus is empty");

  for (const auto& [id, path] : images) {
    auto mit = masks.find(id);
    if (mit == masks.end()) {
      rep.errors.push_back(path.string() + ": no mask found for '" + id + "'");
      continue;
    }
    try {
      const Image img = read_png(path.string(), false);
      Mask merged(img.height, img.width);
      for (const auto& mp : mit->second) {
        const Mask m = image_to_mask(read_png(mp.string(), true));
        if (m.height != img.height || m.width != img.width) {
          throw ImageError(mp.string() + ": mask is " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                           ", image is " + std::to_string(img.width) + "x" + std::to_string(img.height));
        }
        for (std::size_t i = 0; i < m.size(); ++i) merged.pixels[i] |= m.pixels[i];
      }
      Sample s;
      s.id = id;
      s.image = resize_bilinear(image_to_tensor(img, 3), size, size);
      s.mask = mask_to_tensor(resize_nearest(merged, size, size));
      corpus.samples.push_back(std::move(s));
    } catch (const ImageError& e) {
      rep.errors.push_back(e.what());
    }
  }
  for (const auto& [owner, paths] : masks) {
    if (!images.contains(owner)) rep.warnings.push_back(paths.front().string() + ": mask without an image");
  }
  return corpus;
}

struct SplitSpec {
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
};

/// Indices into the id list passed to split().
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Sorts ids, shuffles with a seeded engine, then takes floor(train_fraction·n) for training
/// (the rest is test) and max(1, floor(val_fraction·n_train)) of those for validation.
/// Fewer than 2 samples leave test empty; a single training sample leaves val empty.
inline Split split(const std::vector<std::string>& ids, const SplitSpec& spec = {}) {
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::mt19937_64 engine(mix_seed(spec.seed, "split"));
  std::shuffle(order.begin(), order.end(), engine);

  const std::size_t n = ids.size();
  std::size_t n_train = n < 2 ? n : static_cast<std::size_t>(std::floor(spec.train_fraction * n + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, n < 2 ? n : 1, n < 2 ? n : n - 1);
  std::size_t n_val = 0;
  if (n_train >= 2) {
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(spec.val_fraction * n_train + 1e-9)));
  }
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train - n_val));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train - n_val),
               order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

/// Centre crop keeps this fraction of the image area before resizing back.
inline constexpr double kCropAreaFraction = 0.9;
inline constexpr double kMaxRotationDeg = 10.0;

struct AugmentParams {
  bool hflip = false;
  bool vflip = false;
  bool crop = false;
  double angle_deg = 0.0;

  bool identity() const { return !hflip && !vflip && !crop && angle_deg == 0.0; }
};

inline AugmentParams draw_augment(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> angle(-kMaxRotationDeg, kMaxRotationDeg);
  AugmentParams p;
  p.hflip = coin(rng);
  p.vflip = coin(rng);
  p.crop = coin(rng);
  p.angle_deg = angle(rng);
  return p;
}

/// Engine for one (epoch, sample) pair, independent of visiting order.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t epoch, const std::string& id) {
  return std::mt19937_64(mix_seed(seed, "augment/" + std::to_string(epoch) + "/" + id));
}

namespace detail {

/// Maps an output pixel centre back to continuous source coordinates (pixel centres at k + 0.5).
struct InverseMap {
  double cy, cx, cos_a, sin_a, zoom;
  bool hflip, vflip;
  double w, h;

  void operator()(double y, double x, double& sy, double& sx) const {
    if (hflip) x = w - x;
    if (vflip) y = h - y;
    const double dy = y - cy, dx = x - cx;
    // Undo rotation by angle a (counter-clockwise in image coordinates), then the crop zoom.
    const double ry = cos_a * dy - sin_a * dx;
    const double rx = sin_a * dy + cos_a * dx;
    sy = cy + ry * zoom;
    sx = cx + rx * zoom;
  }
};

}  // namespace detail

/// Same geometric map on image (bilinear) and mask (nearest); outside pixels are zero.
inline Sample apply_augment(const Sample& in, const AugmentParams& p) {
  if (p.identity()) return in;
  const Shape is = in.image.shape();
  const Shape ms = in.mask.shape();
  const std::size_t H = is.h, W = is.w;
  Sample out{in.id, Tensor<float>(is), Tensor<float>(ms)};
  auto img = out.image.mutable_data();
  auto msk = out.mask.mutable_data();
  const auto& src_img = in.image.vec();
  const auto& src_msk = in.mask.vec();

  if (p.angle_deg == 0.0 && !p.crop) {
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t yy = p.vflip ? H - 1 - y : y;
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t xx = p.hflip ? W - 1 - x : x;
        for (std::size_t c = 0; c < is.c; ++c) img[(c * H + y) * W + x] = src_img[(c * H + yy) * W + xx];
        msk[y * W + x] = src_msk[yy * W + xx];
      }
    }
    return out;
  }

  const double a = p.angle_deg * std::numbers::pi / 180.0;
  const detail::InverseMap map{H / 2.0,   W / 2.0, std::cos(a), std::sin(a), p.crop ? std::sqrt(kCropAreaFraction) : 1.0,
                               p.hflip, p.vflip, static_cast<double>(W), static_cast<double>(H)};
  const auto Hi = static_cast<std::ptrdiff_t>(H), Wi = static_cast<std::ptrdiff_t>(W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double sy, sx;
      map(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5, sy, sx);
      const auto ny = static_cast<std::ptrdiff_t>(std::floor(sy));
      const auto nx = static_cast<std::ptrdiff_t>(std::floor(sx));
      msk[y * W + x] = (ny >= 0 && ny < Hi && nx >= 0 && nx < Wi) ? src_msk[ny * W + nx] : 0.0f;

      const double fy = sy - 0.5, fx = sx - 0.5;
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(fy));
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(fx));
      const double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < is.c; ++c) {
        const float* plane = src_img.data() + c * H * W;
        auto px = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
          return (yy >= 0 && yy < Hi && xx >= 0 && xx < Wi) ? plane[yy * Wi + xx] : 0.0;
        };
        const double v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
                         wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
        img[(c * H + y) * W + x] = static_cast<float>(v);
      }
    }
  }
  // Nearest sampling keeps masks binary; thresholding is repeated so the contract does not depend on it.
  for (auto& v : msk) v = v >= 0.5f ? 1.0f : 0.0f;
  return out;
}

inline Sample augment(const Sample& in, std::mt19937_64& rng) { return apply_augment(in, draw_augment(rng)); }

/// One synthetic scan: textured speckled background with a dark elliptical lesion.
struct SynthSample {
  std::string id;
  Image image;  // gray
  Mask mask;
};

inline SynthSample synth_sample(std::size_t size, std::uint64_t seed, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "synth_%03zu", index);
  std::mt19937_64 rng(mix_seed(seed, name));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double S = static_cast<double>(size);

  Mask mask;
  double a = 0, b = 0, cy = 0, cx = 0, theta = 0;
  for (;;) {
    const double frac = 0.04 + 0.22 * u(rng);
    const double ratio = 0.55 + 0.45 * u(rng);
    a = std::sqrt(frac * S * S / (std::numbers::pi * ratio));
    b = a * ratio;
    theta = std::numbers::pi * u(rng);
    const double margin = a + 2.0;
    cy = margin + (S - 2 * margin) * u(rng);
    cx = margin + (S - 2 * margin) * u(rng);
    mask = Mask(size, size);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const double p = (ct * dx + st * dy) / a, q = (-st * dx + ct * dy) / b;
        mask.at(y, x) = p * p + q * q <= 1.0 ? 1 : 0;
      }
    }
    const double got = static_cast<double>(mask.count()) / (S * S);
    if (got >= 0.02 && got <= 0.40) break;
  }

  const double f1 = 2 + 4 * u(rng), f2 = 2 + 4 * u(rng), ph1 = 6.3 * u(rng), ph2 = 6.3 * u(rng);
  const double base = 0.5 + 0.1 * u(rng);
  const double lesion = 0.12 + 0.08 * u(rng);
  Image img{size, size, 1, std::vector<std::uint8_t>(size * size)};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double ty = y / S, tx = x / S;
      double v = base + 0.08 * std::sin(2 * std::numbers::pi * f1 * tx + ph1) *
                            std::cos(2 * std::numbers::pi * f2 * ty + ph2) +
                 0.1 * (0.5 - ty);
      if (mask.at(y, x)) v = lesion;
      v *= 1.0 + 0.18 * noise(rng);  // multiplicative speckle
      img.pixels[y * size + x] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return {name, std::move(img), std::move(mask)};
}

/// Writes n synthetic pairs under root/images and root/masks.
inline void write_synthetic_corpus(const fs::path& root, std::size_t n, std::size_t size, std::uint64_t seed) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (std::size_t i = 0; i < n; ++i) {
    const SynthSample s = synth_sample(size, seed, i);
    write_png((root / "images" / (s.id + ".png")).string(), s.image);
    write_png((root / "masks" / (s.id + "_mask.png")).string(), mask_to_image(s.mask));
  }
}

}  // namespace rsca
