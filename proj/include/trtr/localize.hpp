#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include "trtr/autograd.hpp"
#include "trtr/checkpoint.hpp"
#include "trtr/random.hpp"

namespace trtr {

/// Target state in pixels: center and extent.
struct BoundingBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  static BoundingBox from_top_left(double x, double y, double w, double h) {
    return {x + w / 2.0, y + h / 2.0, w, h};
  }
  double left() const { return cx - w / 2.0; }
  double top() const { return cy - h / 2.0; }
  double right() const { return cx + w / 2.0; }
  double bottom() const { return cy + h / 2.0; }
  bool valid() const { return std::isfinite(cx) && std::isfinite(cy) && w > 0.0 && h > 0.0; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Cell on a prediction grid (row = y index, col = x index).
struct GridPoint {
  std::size_t row = 0, col = 0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

// ---------------------------------------------------------------------------
// Heads: three independent stacks of three 1x1 convolutions + sigmoid.
// ---------------------------------------------------------------------------

struct HeadStack {
  Var w1, b1, w2, b2, w3, b3;

  static HeadStack random(std::size_t d, std::size_t out_channels, Rng& rng, double final_bias = 0.0) {
    return {parameter(glorot_tensor({d, d}, d, d, rng)),
            parameter(Tensor({d})),
            parameter(glorot_tensor({d, d}, d, d, rng)),
            parameter(Tensor({d})),
            parameter(glorot_tensor({d, out_channels}, d, out_channels, rng)),
            parameter(Tensor({out_channels}, final_bias))};
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".w1", w1});
    out.push_back({prefix + ".b1", b1});
    out.push_back({prefix + ".w2", w2});
    out.push_back({prefix + ".b2", b2});
    out.push_back({prefix + ".w3", w3});
    out.push_back({prefix + ".b3", b3});
  }

  /// tokens [N x d] -> [N x out]
  Var forward(const Var& tokens) const {
    Var h = relu(add_row_bias(matmul(tokens, w1), b1));
    h = relu(add_row_bias(matmul(h, w2), b2));
    return sigmoid(add_row_bias(matmul(h, w3), b3));
  }
};

struct HeadWeights {
  HeadStack classification;  // -> 1
  HeadStack offset;          // -> 2 (x, y)
  HeadStack size;            // -> 2 (w, h)

  static HeadWeights random(std::size_t d, Rng& rng) {
    HeadWeights w;
    w.classification = HeadStack::random(d, 1, rng);
    w.offset = HeadStack::random(d, 2, rng);
    w.size = HeadStack::random(d, 2, rng);
    return w;
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    classification.collect(prefix + "heads.cls", out);
    offset.collect(prefix + "heads.offset", out);
    size.collect(prefix + "heads.size", out);
  }
};

/// Y [Hs x Ws], O [Hs x Ws x 2], S [Hs x Ws x 2]; channel 0 is x/width.
struct HeadMaps {
  Var y;
  Var offset;
  Var size;
  std::size_t stride = 8;

  std::size_t rows() const { return y.shape().at(0); }
  std::size_t cols() const { return y.shape().at(1); }
};

inline HeadMaps heads_forward(const Var& decoder_out, const HeadWeights& w, std::size_t stride = 8) {
  kernels::require_rank(decoder_out.value(), 3, "heads_forward");
  const std::size_t d = decoder_out.shape()[0], hs = decoder_out.shape()[1], ws = decoder_out.shape()[2];
  if (w.classification.w1.shape().at(0) != d)
    throw DimensionError("heads_forward: head width " + std::to_string(w.classification.w1.shape()[0]) +
                         " != feature channels " + std::to_string(d));
  Var tokens = map_to_sequence(decoder_out);
  return {reshape(w.classification.forward(tokens), {hs, ws}),
          reshape(w.offset.forward(tokens), {hs, ws, 2}),
          reshape(w.size.forward(tokens), {hs, ws, 2}), stride};
}

// ---------------------------------------------------------------------------
// Cosine window
// ---------------------------------------------------------------------------

inline constexpr double kDefaultWindowInfluence = 0.4;
inline constexpr double kDefaultSizeSmoothing = 0.3;

struct CosineWindow {
  Tensor window;  // Hs x Ws, values in (0, 1]
  double influence = kDefaultWindowInfluence;

  GridPoint center() const { return {window.dim(0) / 2, window.dim(1) / 2}; }
};

/// Raised cosine over one axis, peaking at exactly 1 on cell n/2.
inline std::vector<double> hann_profile(std::size_t n) {
  std::vector<double> out(n);
  const double c = static_cast<double>(n / 2);
  const double half_width = c + 1.0;
  for (std::size_t i = 0; i < n; ++i)
    out[i] = 0.5 + 0.5 * std::cos(std::numbers::pi * (static_cast<double>(i) - c) / half_width);
  return out;
}

inline CosineWindow make_cosine_window(std::size_t rows, std::size_t cols,
                                       double influence = kDefaultWindowInfluence) {
  if (rows == 0 || cols == 0) throw DimensionError("cosine window needs a nonempty grid");
  if (!(influence >= 0.0 && influence <= 1.0)) throw ParameterError("window influence must lie in [0, 1]");
  const auto py = hann_profile(rows);
  const auto px = hann_profile(cols);
  CosineWindow win{Tensor({rows, cols}), influence};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) win.window(r, c) = py[r] * px[c];
  return win;
}

/// Y' = (1 - lambda) Y + lambda * window.
inline Tensor apply_window(const Tensor& y, const CosineWindow& win) {
  if (y.shape() != win.window.shape())
    throw DimensionError("apply_window: map " + shape_string(y.shape()) + " vs window " +
                         shape_string(win.window.shape()));
  Tensor out(y.shape());
  const double lam = win.influence;
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (1.0 - lam) * y[i] + lam * win.window[i];
  return out;
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// First maximum in row-major order; NaN cells are skipped. Empty when the
/// map holds no comparable value.
inline std::optional<GridPoint> argmax_cell(const Tensor& map) {
  kernels::require_rank(map, 2, "argmax");
  const std::size_t cols = map.dim(1);
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (std::isnan(map[i])) continue;
    if (!best || map[i] > map[*best]) best = i;
  }
  if (!best) return std::nullopt;
  return GridPoint{*best / cols, *best % cols};
}

struct CenterEstimate {
  double x = 0.0, y = 0.0;  // search-patch pixels
  GridPoint peak;
  double score = 0.0;
};

/// (x_c, y_c) = s * (argmax(Y') + O(argmax(Y'))).
inline std::optional<CenterEstimate> decode_center(const Tensor& y_prime, const Tensor& offset, std::size_t stride) {
  if (offset.rank() != 3 || offset.dim(0) != y_prime.dim(0) || offset.dim(1) != y_prime.dim(1) || offset.dim(2) != 2)
    throw DimensionError("decode_center: offset map must be Hs x Ws x 2");
  auto peak = argmax_cell(y_prime);
  if (!peak) return std::nullopt;
  const double s = static_cast<double>(stride);
  return CenterEstimate{s * (static_cast<double>(peak->col) + offset(peak->row, peak->col, 0)),
                        s * (static_cast<double>(peak->row) + offset(peak->row, peak->col, 1)), *peak,
                        y_prime(peak->row, peak->col)};
}

/// (w_bb, h_bb) = (W, H) * S(peak).
inline std::pair<double, double> decode_size(const Tensor& size_map, GridPoint peak, double width, double height) {
  if (size_map.rank() != 3 || size_map.dim(2) != 2) throw DimensionError("decode_size: size map must be Hs x Ws x 2");
  if (peak.row >= size_map.dim(0) || peak.col >= size_map.dim(1)) throw DimensionError("decode_size: peak out of grid");
  return {width * size_map(peak.row, peak.col, 0), height * size_map(peak.row, peak.col, 1)};
}

/// Linear interpolation between the previous and predicted size.
inline std::pair<double, double> smooth_size(std::pair<double, double> prev, std::pair<double, double> pred,
                                             double gamma = kDefaultSizeSmoothing) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("smooth_size: gamma must lie in [0, 1]");
  return {(1.0 - gamma) * prev.first + gamma * pred.first, (1.0 - gamma) * prev.second + gamma * pred.second};
}

}  // namespace trtr
