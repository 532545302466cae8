#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "trtr/localize.hpp"

namespace trtr {

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline constexpr std::size_t kSuccessThresholdSteps = 20;

struct Metrics {
  std::vector<double> per_frame_iou;
  double mean_iou = 0.0;
  double success_50 = 0.0;
  double success_75 = 0.0;
  std::vector<double> success_curve;  // thresholds i / 20, i = 0..20
  double auc = 0.0;
};

namespace metrics_detail {

// A frame counts as a success at threshold t when it overlaps the truth at
// all and its IoU reaches t.
inline double success_rate(const std::vector<double>& ious, double t) {
  if (ious.empty()) return 0.0;
  std::size_t n = 0;
  for (double v : ious)
    if (v > 0.0 && v >= t) ++n;
  return static_cast<double>(n) / static_cast<double>(ious.size());
}

}  // namespace metrics_detail

inline Metrics evaluate(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& truth) {
  if (pred.size() != truth.size())
    throw InputError("evaluate: " + std::to_string(pred.size()) + " predictions for " + std::to_string(truth.size()) +
                     " ground-truth boxes");
  Metrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) m.per_frame_iou.push_back(iou(pred[i], truth[i]));
  if (!pred.empty()) {
    double s = 0.0;
    for (double v : m.per_frame_iou) s += v;
    m.mean_iou = s / static_cast<double>(pred.size());
  }
  m.success_50 = metrics_detail::success_rate(m.per_frame_iou, 0.5);
  m.success_75 = metrics_detail::success_rate(m.per_frame_iou, 0.75);
  for (std::size_t i = 0; i <= kSuccessThresholdSteps; ++i)
    m.success_curve.push_back(
        metrics_detail::success_rate(m.per_frame_iou, static_cast<double>(i) / static_cast<double>(kSuccessThresholdSteps)));
  double area = 0.0;
  for (double v : m.success_curve) area += v;
  m.auc = area / static_cast<double>(m.success_curve.size());
  return m;
}

}  // namespace trtr
