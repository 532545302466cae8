#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "trtr/autograd.hpp"
#include "trtr/localize.hpp"

namespace trtr {

struct FocalParams {
  double alpha = 2.0;
  double beta = 4.0;
};

struct LossWeights {
  double offset = 1.0;  // lambda_1
  double size = 1.0;    // lambda_2
};

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kMinOverlap = 0.7;
inline constexpr double kMinSigma = 0.5;

/// Training target for one search image.
struct GroundTruth {
  double center_x = 0.0, center_y = 0.0;  // search-patch pixels
  GridPoint cell;                         // floor(center / s)
  double norm_w = 0.0, norm_h = 0.0;      // box size / search extent
  Tensor label;                           // Hs x Ws Gaussian, exactly 1 at cell
};

/// exp(-((x - px)^2 + (y - py)^2) / (2 sigma^2)) over an Hs x Ws grid.
inline Tensor gaussian_label(GridPoint center, double sigma, std::size_t rows, std::size_t cols) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian_label: sigma must be positive");
  if (center.row >= rows || center.col >= cols) throw DimensionError("gaussian_label: center outside grid");
  Tensor out({rows, cols});
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double dy = static_cast<double>(r) - static_cast<double>(center.row);
      const double dx = static_cast<double>(c) - static_cast<double>(center.col);
      out(r, c) = std::exp(-(dx * dx + dy * dy) / denom);
    }
  }
  return out;
}

namespace detail {

// Smallest positive root of a r^2 + b r + c = 0 on the side where the
// overlap constraint first fails.
inline double lower_root(double a, double b, double c) {
  const double disc = std::max(0.0, b * b - 4.0 * a * c);
  return (-b - std::sqrt(disc)) / (2.0 * a);
}
inline double upper_root(double a, double b, double c) {
  const double disc = std::max(0.0, b * b - 4.0 * a * c);
  return (-b + std::sqrt(disc)) / (2.0 * a);
}

}  // namespace detail

/// Largest corner displacement r keeping IoU >= min_overlap, taken as the
/// minimum over three perturbation modes: shifted box, enlarged box, shrunk box.
inline double overlap_radius(double w, double h, double min_overlap = kMinOverlap) {
  const double o = min_overlap;
  // Shifted by r along both axes: (w-r)(h-r) / (2wh - (w-r)(h-r)) >= o
  const double r_shift = detail::lower_root(1.0, -(w + h), w * h * (1.0 - o) / (1.0 + o));
  // Each side pushed out by r: wh / ((w+2r)(h+2r)) >= o
  const double r_grow = detail::upper_root(4.0 * o, 2.0 * o * (w + h), (o - 1.0) * w * h);
  // Each side pulled in by r: (w-2r)(h-2r) / wh >= o
  const double r_shrink = detail::lower_root(4.0, -2.0 * (w + h), (1.0 - o) * w * h);
  return std::min({r_shift, r_grow, r_shrink});
}

/// Size-adaptive Gaussian spread for a box measured in grid cells.
inline double adaptive_sigma(double w, double h, double min_overlap = kMinOverlap) {
  if (!(w > 0.0 && h > 0.0)) throw ParameterError("adaptive_sigma: box extent must be positive");
  return std::max(kMinSigma, overlap_radius(w, h, min_overlap) / 3.0);
}

/// Penalty-reduced pixel-wise focal loss, summed (not normalized).
inline Var focal_loss(const Var& y, const Tensor& target, const FocalParams& p = {}) {
  if (y.shape() != target.shape())
    throw DimensionError("focal_loss: prediction " + shape_string(y.shape()) + " vs label " +
                         shape_string(target.shape()));
  const Tensor& yv = y.value();
  double loss = 0.0;
  Tensor grad(yv.shape());
  for (std::size_t i = 0; i < yv.size(); ++i) {
    const double raw = yv[i];
    const double v = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const bool clamped = v != raw;
    if (target[i] == 1.0) {
      const double one_minus = 1.0 - v;
      loss -= std::pow(one_minus, p.alpha) * std::log(v);
      // d/dv of -(1-v)^a log v
      grad[i] = p.alpha * std::pow(one_minus, p.alpha - 1.0) * std::log(v) - std::pow(one_minus, p.alpha) / v;
    } else {
      const double wneg = std::pow(1.0 - target[i], p.beta);
      const double log1m = std::log(1.0 - v);
      loss -= wneg * std::pow(v, p.alpha) * log1m;
      // d/dv of -w v^a log(1-v)
      grad[i] = -wneg * (p.alpha * std::pow(v, p.alpha - 1.0) * log1m - std::pow(v, p.alpha) / (1.0 - v));
    }
    if (clamped) grad[i] = 0.0;
  }
  return Var::record(Tensor::scalar(loss), {y}, [y, grad = std::move(grad)](const Tensor& g) {
    Tensor gy = grad;
    for (double& v : gy.data()) v *= g[0];
    y.accumulate_grad(gy);
  });
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Component-sum L1 between map(cell, 0..1) and target.
inline Var l1_at_cell(const Var& map, GridPoint cell, std::pair<double, double> target, const char* what) {
  const Tensor& m = map.value();
  if (m.rank() != 3 || m.dim(2) != 2) throw DimensionError(std::string(what) + ": map must be Hs x Ws x 2");
  if (cell.row >= m.dim(0) || cell.col >= m.dim(1)) throw DimensionError(std::string(what) + ": cell outside grid");
  const double dx = m(cell.row, cell.col, 0) - target.first;
  const double dy = m(cell.row, cell.col, 1) - target.second;
  return Var::record(Tensor::scalar(std::abs(dx) + std::abs(dy)), {map}, [map, cell, dx, dy](const Tensor& g) {
    Tensor gm(map.shape());
    gm(cell.row, cell.col, 0) = g[0] * sign(dx);
    gm(cell.row, cell.col, 1) = g[0] * sign(dy);
    map.accumulate_grad(gm);
  });
}

}  // namespace detail

inline GridPoint grid_cell(double x, double y, std::size_t stride) {
  const double s = static_cast<double>(stride);
  return {static_cast<std::size_t>(std::floor(y / s)), static_cast<std::size_t>(std::floor(x / s))};
}

/// |O(p~) - (p/s - p~)| with p in search-patch pixels.
inline Var offset_loss(const Var& offset, double center_x, double center_y, std::size_t stride) {
  if (center_x < 0.0 || center_y < 0.0) throw DimensionError("offset_loss: center outside grid");
  const GridPoint cell = grid_cell(center_x, center_y, stride);
  const double s = static_cast<double>(stride);
  return detail::l1_at_cell(offset, cell,
                            {center_x / s - static_cast<double>(cell.col), center_y / s - static_cast<double>(cell.row)},
                            "offset_loss");
}

/// |S(p~) - s~| with s~ the normalized box size.
inline Var size_loss(const Var& size, std::pair<double, double> norm_size, GridPoint cell) {
  return detail::l1_at_cell(size, cell, norm_size, "size_loss");
}

/// L = L_Y + lambda_1 L_O + lambda_2 L_S.
inline Var joint_loss(const Var& l_y, const Var& l_o, const Var& l_s, const LossWeights& w = {}) {
  return l_y + scale(l_o, w.offset) + scale(l_s, w.size);
}

inline double joint_loss(double l_y, double l_o, double l_s, const LossWeights& w = {}) {
  return l_y + w.offset * l_o + w.size * l_s;
}

struct LossBreakdown {
  Var total, classification, offset, size;
};

/// Full training objective for one search image.
inline LossBreakdown tracking_loss(const HeadMaps& maps, const GroundTruth& gt, const FocalParams& focal = {},
                                   const LossWeights& weights = {}) {
  Var ly = focal_loss(maps.y, gt.label, focal);
  Var lo = offset_loss(maps.offset, gt.center_x, gt.center_y, maps.stride);
  Var ls = size_loss(maps.size, {gt.norm_w, gt.norm_h}, gt.cell);
  return {joint_loss(ly, lo, ls, weights), ly, lo, ls};
}

/// Builds the target for a box given in search-patch pixels.
inline GroundTruth make_ground_truth(const BoundingBox& box_in_patch, std::size_t rows, std::size_t cols,
                                     std::size_t stride, double patch_w, double patch_h) {
  const GridPoint cell = grid_cell(box_in_patch.cx, box_in_patch.cy, stride);
  if (box_in_patch.cx < 0.0 || box_in_patch.cy < 0.0 || cell.row >= rows || cell.col >= cols)
    throw DimensionError("ground truth center falls outside the search grid");
  const double s = static_cast<double>(stride);
  const double sigma = adaptive_sigma(box_in_patch.w / s, box_in_patch.h / s);
  return {box_in_patch.cx, box_in_patch.cy, cell, std::min(1.0, box_in_patch.w / patch_w),
          std::min(1.0, box_in_patch.h / patch_h), gaussian_label(cell, sigma, rows, cols)};
}

}  // namespace trtr
