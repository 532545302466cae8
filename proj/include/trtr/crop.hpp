#pragma once

#include <cmath>

#include "trtr/image.hpp"
#include "trtr/localize.hpp"
#include "trtr/transformer.hpp"

namespace trtr {

inline std::size_t round_up_to_stride(std::size_t size, std::size_t stride = 8) {
  return (size + stride - 1) / stride * stride;
}

/// Square patch resampled from a frame. Patch pixel (u, v) has its center at
/// patch coordinate (u + 0.5, v + 0.5), which maps to image coordinate
/// origin + (u + 0.5) * scale. Image pixel i likewise spans [i, i + 1).
struct CropResult {
  Tensor patch;       // 3 x P x P
  GridMask pad_mask;  // P x P, true where the sample fell outside the image
  double scale = 1.0; // image pixels per patch pixel
  double origin_x = 0.0, origin_y = 0.0;

  std::size_t size() const { return patch.dim(1); }

  std::pair<double, double> to_image(double px, double py) const {
    return {origin_x + px * scale, origin_y + py * scale};
  }
  std::pair<double, double> to_patch(double ix, double iy) const {
    return {(ix - origin_x) / scale, (iy - origin_y) / scale};
  }
  BoundingBox box_to_patch(const BoundingBox& b) const {
    auto [x, y] = to_patch(b.cx, b.cy);
    return {x, y, b.w / scale, b.h / scale};
  }
  BoundingBox box_to_image(const BoundingBox& b) const {
    auto [x, y] = to_image(b.cx, b.cy);
    return {x, y, b.w * scale, b.h * scale};
  }
};

/// Side of the context square around a box: sqrt((w + p)(h + p)), p = (w + h) / 2.
inline double context_side(const BoundingBox& box) {
  const double p = (box.w + box.h) / 2.0;
  return std::sqrt((box.w + p) * (box.h + p));
}

/// Bilinear sample of channel c at continuous image coordinate (x, y).
inline double sample_bilinear(const Tensor& img, std::size_t c, double x, double y) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  const double fx = std::clamp(x - 0.5, 0.0, static_cast<double>(w - 1));
  const double fy = std::clamp(y - 0.5, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(fx));
  const auto y0 = static_cast<std::size_t>(std::floor(fy));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double tx = fx - static_cast<double>(x0), ty = fy - static_cast<double>(y0);
  const double top = (1.0 - tx) * img(c, y0, x0) + tx * img(c, y0, x1);
  const double bottom = (1.0 - tx) * img(c, y1, x0) + tx * img(c, y1, x1);
  return (1.0 - ty) * top + ty * bottom;
}

/// Resamples a P x P patch (P = nominal size rounded up to the stride)
/// centered on (cx, cy) with the given scale; out-of-image samples take the
/// per-channel image mean and are flagged in pad_mask.
inline CropResult crop_patch(const Frame& frame, double cx, double cy, double scale, std::size_t nominal_size,
                             std::size_t stride = 8) {
  if (nominal_size == 0) throw ConfigError("crop size must be positive");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw TrackingError("crop scale must be positive");
  const std::size_t p = round_up_to_stride(nominal_size, stride);
  CropResult res;
  res.patch = Tensor({3, p, p});
  res.pad_mask = GridMask(p, p);
  res.scale = scale;
  res.origin_x = cx - static_cast<double>(p) / 2.0 * scale;
  res.origin_y = cy - static_cast<double>(p) / 2.0 * scale;
  const auto means = frame.channel_means();
  const double w = static_cast<double>(frame.width()), h = static_cast<double>(frame.height());
  for (std::size_t v = 0; v < p; ++v) {
    const double y = res.origin_y + (static_cast<double>(v) + 0.5) * scale;
    for (std::size_t u = 0; u < p; ++u) {
      const double x = res.origin_x + (static_cast<double>(u) + 0.5) * scale;
      const bool inside = x >= 0.0 && x < w && y >= 0.0 && y < h;
      res.pad_mask.set(v, u, !inside);
      for (std::size_t c = 0; c < 3; ++c)
        res.patch(c, v, u) = inside ? sample_bilinear(frame.pixels, c, x, y) : means[c];
    }
  }
  return res;
}

inline void require_box_overlaps(const Frame& frame, const BoundingBox& box) {
  if (!box.valid()) throw TrackingError("invalid bounding box");
  if (box.right() <= 0.0 || box.bottom() <= 0.0 || box.left() >= static_cast<double>(frame.width()) ||
      box.top() >= static_cast<double>(frame.height()))
    throw TrackingError("bounding box lies entirely outside the image");
}

/// Template crop: context square around the box resampled to T x T.
inline CropResult crop_template(const Frame& frame, const BoundingBox& box, std::size_t template_size,
                                std::size_t stride = 8) {
  require_box_overlaps(frame, box);
  const double scale = context_side(box) / static_cast<double>(template_size);
  return crop_patch(frame, box.cx, box.cy, scale, template_size, stride);
}

/// Search crop: same scale as the template rule, so the field of view grows
/// by search_size / template_size around the previous center.
inline CropResult crop_search(const Frame& frame, const BoundingBox& prev_box, std::size_t search_size,
                              std::size_t template_size, std::size_t stride = 8) {
  require_box_overlaps(frame, prev_box);
  if (search_size < template_size) throw ConfigError("search size must not be smaller than template size");
  const double scale = context_side(prev_box) / static_cast<double>(template_size);
  return crop_patch(frame, prev_box.cx, prev_box.cy, scale, search_size, stride);
}

/// Cell-level padding map: a cell is padded when the sample at its center is.
inline GridMask cell_mask(const CropResult& crop, std::size_t stride = 8) {
  const std::size_t cells = crop.size() / stride;
  GridMask m(cells, cells);
  for (std::size_t r = 0; r < cells; ++r)
    for (std::size_t c = 0; c < cells; ++c) m.set(r, c, crop.pad_mask.at(r * stride + stride / 2, c * stride + stride / 2));
  return m;
}

}  // namespace trtr
