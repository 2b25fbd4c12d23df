#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "segqc/grid.hpp"
#include "segqc/sample.hpp"
#include "segqc/volume.hpp"

namespace segqc {

struct PreprocessConfig {
  double hu_min = -200.0;
  double hu_max = 200.0;
  // Pixels kept around the class bounding box before resizing.
  std::size_t crop_margin = 16;
};

// Clip to the HU window then map affinely onto [0, 1].
inline float normalize_hu(double hu, const PreprocessConfig& cfg = {}) {
  const double c = std::clamp(hu, cfg.hu_min, cfg.hu_max);
  return static_cast<float>((c - cfg.hu_min) / (cfg.hu_max - cfg.hu_min));
}

struct CropBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounds
  std::size_t width() const { return x1 - x0 + 1; }
  std::size_t height() const { return y1 - y0 + 1; }
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

// Tight box of the mask dilated by `margin` and clamped to the plane; the
// whole plane when the mask is empty.
inline CropBox crop_box(const Mask2& mask, std::size_t margin) {
  const std::size_t w = mask.dim(0), h = mask.dim(1);
  CropBox box{w, h, 0, 0};
  bool any = false;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask.at(x, y)) continue;
      any = true;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  if (!any) return {0, 0, w - 1, h - 1};
  box.x0 = box.x0 > margin ? box.x0 - margin : 0;
  box.y0 = box.y0 > margin ? box.y0 - margin : 0;
  box.x1 = std::min(w - 1, box.x1 + margin);
  box.y1 = std::min(h - 1, box.y1 + margin);
  return box;
}

// Half-pixel-centred resampling of a crop window onto an out x out grid.
inline Grid2<float> resize_bilinear(const Grid2<float>& src, const CropBox& box, std::size_t out) {
  Grid2<float> dst({out, out});
  const double sx = static_cast<double>(box.width()) / static_cast<double>(out);
  const double sy = static_cast<double>(box.height()) / static_cast<double>(out);
  std::vector<std::size_t> xa(out), xb(out);
  std::vector<double> xf(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double fx = std::clamp((static_cast<double>(i) + 0.5) * sx - 0.5, 0.0, static_cast<double>(box.width() - 1));
    xa[i] = static_cast<std::size_t>(fx);
    xb[i] = std::min(xa[i] + 1, box.width() - 1);
    xf[i] = fx - static_cast<double>(xa[i]);
  }
  for (std::size_t j = 0; j < out; ++j) {
    const double fy = std::clamp((static_cast<double>(j) + 0.5) * sy - 0.5, 0.0, static_cast<double>(box.height() - 1));
    const std::size_t ya = static_cast<std::size_t>(fy);
    const std::size_t yb = std::min(ya + 1, box.height() - 1);
    const double wy = fy - static_cast<double>(ya);
    for (std::size_t i = 0; i < out; ++i) {
      const double a = src.at(box.x0 + xa[i], box.y0 + ya), b = src.at(box.x0 + xb[i], box.y0 + ya);
      const double c = src.at(box.x0 + xa[i], box.y0 + yb), d = src.at(box.x0 + xb[i], box.y0 + yb);
      const double top = a + (b - a) * xf[i];
      const double bottom = c + (d - c) * xf[i];
      dst.at(i, j) = static_cast<float>(top + (bottom - top) * wy);
    }
  }
  return dst;
}

inline Mask2 resize_nearest(const Mask2& src, const CropBox& box, std::size_t out) {
  Mask2 dst({out, out});
  std::vector<std::size_t> xs(out);
  for (std::size_t i = 0; i < out; ++i) xs[i] = box.x0 + std::min(box.width() - 1, (2 * i + 1) * box.width() / (2 * out));
  for (std::size_t j = 0; j < out; ++j) {
    const std::size_t y = box.y0 + std::min(box.height() - 1, (2 * j + 1) * box.height() / (2 * out));
    for (std::size_t i = 0; i < out; ++i) dst.at(i, j) = src.at(xs[i], y);
  }
  return dst;
}

// Core 2D path shared by volume slicing and dataset synthesis: the crop is
// chosen from `mask` (the labelling under assessment).
inline SlicePair preprocess_plane(const Grid2<std::int16_t>& hu, const Mask2& mask,
                                  const PreprocessConfig& cfg = {}) {
  if (hu.dims() != mask.dims()) throw ArgumentError("image and mask planes differ in shape");
  if (hu.dim(0) < 1 || hu.dim(1) < 1) throw ArgumentError("empty plane");
  Grid2<float> norm(hu.dims());
  for (std::size_t i = 0; i < hu.size(); ++i) norm[i] = normalize_hu(hu[i], cfg);
  const CropBox box = crop_box(mask, cfg.crop_margin);
  SlicePair p;
  p.pixels = resize_bilinear(norm, box, kSliceSize);
  p.mask = resize_nearest(mask, box, kSliceSize);
  p.empty_mask = is_empty_mask(mask);
  return p;
}

inline SlicePair preprocess_slice(const LabeledVolume& v, std::size_t axis, std::size_t slice_index, ClassId class_id,
                                  LabelSource source, const PreprocessConfig& cfg = {}) {
  if (!v.classes.count(class_id)) {
    throw ArgumentError("class " + std::to_string(class_id) + " is not registered for volume '" + v.id + "'");
  }
  const auto hu = extract_plane(v.image, axis, slice_index);
  const auto labels = extract_plane(v.labels(source), axis, slice_index);
  SlicePair p = preprocess_plane(hu, class_mask(labels, class_id), cfg);
  p.class_id = class_id;
  p.volume_id = v.id;
  p.slice_index = static_cast<std::int64_t>(slice_index);
  return p;
}

// Sorted indices of slices (along the volume's axial axis) holding the class.
inline std::vector<std::size_t> slices_containing(const LabeledVolume& v, ClassId class_id, LabelSource source) {
  const auto& labels = v.labels(source);
  const std::size_t axis = v.axial_axis;
  std::vector<std::uint8_t> hit(labels.dim(axis), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == class_id) hit[labels.coords(i)[axis]] = 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < hit.size(); ++s)
    if (hit[s]) out.push_back(s);
  return out;
}

}  // namespace segqc
