#pragma once

// Pixel-level evaluation: confusion counts, per-region overlap metrics, boundary F-score and
// dataset aggregates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsca/tensor.hpp"

namespace rsca {

/// Binary mask stored row-major, one byte per pixel (0 or 1).
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }
  std::size_t count() const { return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), 1)); }

  Mask inverted() const {
    Mask m = *this;
    for (auto& p : m.pixels) p = p ? 0 : 1;
    return m;
  }

  void validate() const {
    if (pixels.size() != height * width) throw ValidationError("mask: pixel count does not match dimensions");
    for (auto p : pixels) {
      if (p > 1) throw ValidationError("mask: values must be 0 or 1, found " + std::to_string(p));
    }
  }

  bool operator==(const Mask&) const = default;
};

/// Thresholds one plane of a probability map at `threshold` (value >= threshold is lesion).
template <class T>
Mask binarize(const Tensor<T>& probs, std::size_t index = 0, double threshold = 0.5) {
  const Shape s = probs.shape();
  Mask m(s.h, s.w);
  const std::size_t off = index * s.plane();
  for (std::size_t i = 0; i < s.plane(); ++i) m.pixels[i] = probs[off + i] >= static_cast<T>(threshold) ? 1 : 0;
  return m;
}

/// Reads an exactly-binary mask plane out of a tensor; anything else is a validation error.
template <class T>
Mask mask_from_tensor(const Tensor<T>& t, std::size_t index = 0) {
  const Shape s = t.shape();
  Mask m(s.h, s.w);
  const std::size_t off = index * s.plane();
  for (std::size_t i = 0; i < s.plane(); ++i) {
    const T v = t[off + i];
    if (v != T(0) && v != T(1)) throw ValidationError("mask tensor is not binary");
    m.pixels[i] = v == T(1) ? 1 : 0;
  }
  return m;
}

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  /// Roles of the two classes exchanged, i.e. the counts for the background region.
  ConfusionCounts swapped() const { return {tn, fn, fp, tp}; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(const Mask& pred, const Mask& target) {
  pred.validate();
  target.validate();
  if (pred.height != target.height || pred.width != target.width) {
    throw DimensionError("confusion: mask sizes differ");
  }
  ConfusionCounts cc;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.pixels[i] != 0;
    const bool t = target.pixels[i] != 0;
    if (p && t) ++cc.tp;
    else if (p) ++cc.fp;
    else if (t) ++cc.fn;
    else ++cc.tn;
  }
  return cc;
}

struct RegionMetrics {
  double dsc = 0.0;
  double accuracy = 0.0;
  double iou = 0.0;
  double recall = 0.0;
};

/// DSC = 2TP/(2TP+FP+FN), Acc = (TP+TN)/total, IoU = TP/(TP+FP+FN). A region absent from both
/// prediction and truth scores DSC = IoU = recall = 1.
inline RegionMetrics region_metrics(const ConfusionCounts& cc) {
  if (cc.total() == 0) throw ValidationError("region_metrics: all confusion counts are zero");
  RegionMetrics m;
  const double tp = static_cast<double>(cc.tp);
  const double fp = static_cast<double>(cc.fp);
  const double fn = static_cast<double>(cc.fn);
  const double tn = static_cast<double>(cc.tn);
  const bool empty = cc.tp + cc.fp + cc.fn == 0;
  m.dsc = empty ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  m.iou = empty ? 1.0 : tp / (tp + fp + fn);
  m.accuracy = (tp + tn) / static_cast<double>(cc.total());
  m.recall = cc.tp + cc.fn == 0 ? 1.0 : tp / (tp + fn);
  return m;
}

/// Foreground pixels with at least one in-image 4-neighbour in the background.
inline Mask boundary(const Mask& m) {
  Mask b(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = (y > 0 && !m.at(y - 1, x)) || (y + 1 < m.height && !m.at(y + 1, x)) ||
                        (x > 0 && !m.at(y, x - 1)) || (x + 1 < m.width && !m.at(y, x + 1));
      b.at(y, x) = edge ? 1 : 0;
    }
  }
  return b;
}

/// 0.75% of the image diagonal, rounded up.
inline double bf_tolerance(std::size_t height, std::size_t width) {
  const double diag = std::sqrt(static_cast<double>(height * height + width * width));
  return std::ceil(0.0075 * diag);
}

namespace detail {

/// Fraction of `from` boundary pixels lying within Euclidean distance tol of some `to` pixel.
inline double matched_fraction(const Mask& from, const Mask& to, double tol) {
  const auto r = static_cast<std::ptrdiff_t>(std::floor(tol));
  const double tol2 = tol * tol;
  std::size_t total = 0;
  std::size_t hit = 0;
  for (std::size_t y = 0; y < from.height; ++y) {
    for (std::size_t x = 0; x < from.width; ++x) {
      if (!from.at(y, x)) continue;
      ++total;
      bool found = false;
      for (std::ptrdiff_t dy = -r; dy <= r && !found; ++dy) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(to.height)) continue;
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(to.width)) continue;
          if (static_cast<double>(dy * dy + dx * dx) <= tol2 && to.at(yy, xx)) {
            found = true;
            break;
          }
        }
      }
      if (found) ++hit;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace detail

/// Boundary F1 between two boundary maps at distance tolerance tol. Both empty scores 1,
/// exactly one empty scores 0.
inline double bf_score(const Mask& pred_boundary, const Mask& target_boundary, double tol) {
  const bool pe = pred_boundary.count() == 0;
  const bool te = target_boundary.count() == 0;
  if (pe && te) return 1.0;
  if (pe || te) return 0.0;
  const double precision = detail::matched_fraction(pred_boundary, target_boundary, tol);
  const double recall = detail::matched_fraction(target_boundary, pred_boundary, tol);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

/// Per-image evaluation record used by aggregate().
struct ImageEvaluation {
  std::string id;
  ConfusionCounts counts;  // lesion as the positive class
  double bf_lesion = 0.0;
  double bf_background = 0.0;
};

inline ImageEvaluation evaluate_image(const Mask& pred, const Mask& target, std::string id = {}) {
  ImageEvaluation e;
  e.id = std::move(id);
  e.counts = confusion(pred, target);
  const double tol = bf_tolerance(pred.height, pred.width);
  e.bf_lesion = bf_score(boundary(pred), boundary(target), tol);
  e.bf_background = bf_score(boundary(pred.inverted()), boundary(target.inverted()), tol);
  return e;
}

struct RegionRow {
  std::string region;
  double dsc = 0.0;
  double accuracy = 0.0;
  double iou = 0.0;
  double bf_score = 0.0;
  double recall = 0.0;
};

struct MetricsReport {
  RegionRow lesion;
  RegionRow background;
  double global_acc = 0.0;
  double mean_acc = 0.0;
  double mean_iou = 0.0;
  double weighted_iou = 0.0;
  double mean_bf = 0.0;
  ConfusionCounts counts;  // summed over images, lesion positive
  std::size_t images = 0;
};

/// Dataset-level report: overlap metrics from summed confusion counts, BF scores averaged over images.
inline MetricsReport aggregate(std::span<const ImageEvaluation> evals) {
  if (evals.empty()) throw ValidationError("aggregate: no images");
  MetricsReport r;
  double bf_l = 0.0;
  double bf_b = 0.0;
  for (const auto& e : evals) {
    r.counts += e.counts;
    bf_l += e.bf_lesion;
    bf_b += e.bf_background;
  }
  r.images = evals.size();
  const double n = static_cast<double>(evals.size());
  const RegionMetrics les = region_metrics(r.counts);
  const RegionMetrics bg = region_metrics(r.counts.swapped());
  r.lesion = {"lesion", les.dsc, les.accuracy, les.iou, bf_l / n, les.recall};
  r.background = {"background", bg.dsc, bg.accuracy, bg.iou, bf_b / n, bg.recall};

  const double total = static_cast<double>(r.counts.total());
  r.global_acc = static_cast<double>(r.counts.tp + r.counts.tn) / total;
  r.mean_acc = (les.recall + bg.recall) / 2.0;
  r.mean_iou = (les.iou + bg.iou) / 2.0;
  const double lesion_share = static_cast<double>(r.counts.tp + r.counts.fn) / total;
  r.weighted_iou = lesion_share * les.iou + (1.0 - lesion_share) * bg.iou;
  r.mean_bf = (r.lesion.bf_score + r.background.bf_score) / 2.0;
  return r;
}

}  // namespace rsca
