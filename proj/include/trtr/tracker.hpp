#pragma once

#include <cmath>
#include <optional>

#include "trtr/loss.hpp"
#include "trtr/model.hpp"
#include "trtr/online.hpp"

namespace trtr {

struct TrackerConfig {
  std::size_t template_size = 127;
  std::size_t search_size = 255;
  double window_influence = kDefaultWindowInfluence;
  double size_smoothing = kDefaultSizeSmoothing;
  double blend_weight = kDefaultBlendWeight;
  bool online = false;
  bool pe_mask = true;
  std::uint64_t seed = 0;  // online filter initialization

  GaussNewtonOptions online_init{10, 10, 8};
  GaussNewtonOptions online_update{1, 5, 8};
  std::size_t update_interval = 10;     // frames between filter updates
  double update_confidence = 0.7;       // a peak score above this forces an update
  std::size_t memory_capacity = kOnlineMemoryCapacity;
  double memory_learning_rate = kOnlineLearningRate;

  void validate() const {
    if (template_size == 0) throw ConfigError("template size must be positive");
    if (search_size < template_size) throw ConfigError("search size must not be smaller than template size");
    if (!(window_influence >= 0.0 && window_influence <= 1.0)) throw ConfigError("window influence must lie in [0, 1]");
    if (!(size_smoothing >= 0.0 && size_smoothing <= 1.0)) throw ConfigError("size smoothing must lie in [0, 1]");
    if (!(blend_weight >= 0.0 && blend_weight <= 1.0)) throw ConfigError("blend weight must lie in [0, 1]");
    if (update_interval == 0) throw ConfigError("update interval must be positive");
  }
};

struct OnlineState {
  OnlineFilter filter;
  TrainingMemory memory;
  std::size_t frames_since_update = 0;
  bool degraded = false;  // last solve hit a non-finite value
};

struct TrackerState {
  TrackerNet net;
  TrackerConfig config;
  EncoderOutput template_memory;
  BoundingBox box;
  CosineWindow window;
  std::optional<OnlineState> online;
  std::size_t frame_index = 0;
};

struct Diagnostics {
  Tensor y;         // raw classification map
  Tensor y_window;  // after the cosine window
  Tensor y_final;   // map used for decoding (blended when online)
  std::optional<Tensor> y_online;
  double peak_score = 0.0;
  GridPoint peak;
  bool lost = false;
  bool online_updated = false;
};

struct TrackResult {
  BoundingBox box;
  Diagnostics diagnostics;
};

namespace tracker_detail {

// Online label: Gaussian at the cell holding the target center.
inline Tensor online_label(const BoundingBox& box_in_patch, std::size_t cells, std::size_t stride) {
  const double s = static_cast<double>(stride);
  const double last = static_cast<double>(cells) - 1.0;
  GridPoint cell{static_cast<std::size_t>(std::clamp(std::floor(box_in_patch.cy / s), 0.0, last)),
                 static_cast<std::size_t>(std::clamp(std::floor(box_in_patch.cx / s), 0.0, last))};
  return gaussian_label(cell, adaptive_sigma(box_in_patch.w / s, box_in_patch.h / s), cells, cells);
}

inline Tensor search_features(const TrackerNet& net, const CropResult& crop) {
  NoGradGuard guard;
  return backbone_forward(constant(crop.patch), net.backbone).mid.value();
}

inline BoundingBox clamp_to_image(BoundingBox b, const Frame& frame) {
  const double w = static_cast<double>(frame.width()), h = static_cast<double>(frame.height());
  b.w = std::clamp(b.w, 1.0, w);
  b.h = std::clamp(b.h, 1.0, h);
  b.cx = std::clamp(b.cx, 0.0, w);
  b.cy = std::clamp(b.cy, 0.0, h);
  return b;
}

}  // namespace tracker_detail

/// Encodes the template once and, when enabled, fits the online filter to
/// five shifted first-frame search crops.
inline TrackerState init(const Frame& first_frame, const BoundingBox& box, const TrackerNet& net,
                         const TrackerConfig& config) {
  config.validate();
  require_box_overlaps(first_frame, box);
  NoGradGuard guard;
  TrackerState st;
  st.net = net;
  st.config = config;
  st.box = box;
  const CropResult tmpl = crop_template(first_frame, box, config.template_size, kOutputStride);
  st.template_memory = encode_template(net, tmpl, config.pe_mask);
  const std::size_t cells = round_up_to_stride(config.search_size, kOutputStride) / kOutputStride;
  st.window = make_cosine_window(cells, cells, config.window_influence);

  if (config.online) {
    Rng rng(config.seed);
    OnlineState os;
    os.filter = OnlineFilter::initial(net.config.mid_channels, rng);
    os.memory.capacity = config.memory_capacity;
    os.memory.learning_rate = config.memory_learning_rate;
    const double shift = context_side(box) / 8.0;
    const std::array<std::pair<double, double>, 5> shifts{
        {{0.0, 0.0}, {shift, 0.0}, {-shift, 0.0}, {0.0, shift}, {0.0, -shift}}};
    std::vector<std::pair<Tensor, Tensor>> samples;
    for (auto [dx, dy] : shifts) {
      BoundingBox center = box;
      center.cx += dx;
      center.cy += dy;
      const CropResult crop = crop_search(first_frame, center, config.search_size, config.template_size, kOutputStride);
      samples.emplace_back(tracker_detail::search_features(net, crop),
                           tracker_detail::online_label(crop.box_to_patch(box), cells, kOutputStride));
    }
    seed_memory(os.memory, std::move(samples));
    auto solved = solve_cg(os.filter, os.memory, config.online_init);
    os.filter = std::move(solved.filter);
    os.degraded = solved.report.degraded;
    st.online = std::move(os);
  }
  return st;
}

/// One tracking step. A map with no finite value keeps the previous box and
/// flags the frame as lost.
inline TrackResult track_frame(TrackerState& st, const Frame& frame, AttentionTrace* trace = nullptr) {
  NoGradGuard guard;
  const TrackerConfig& cfg = st.config;
  const CropResult crop = crop_search(frame, st.box, cfg.search_size, cfg.template_size, kOutputStride);
  const SearchPrediction pred = predict_search(st.net, st.template_memory, crop, cfg.pe_mask, trace);

  Diagnostics diag;
  diag.y = pred.maps.y.value();
  diag.y_window = apply_window(diag.y, st.window);
  diag.y_final = diag.y_window;
  if (st.online) {
    diag.y_online = online_forward(st.online->filter, pred.mid.value());
    diag.y_final = blend(diag.y_window, *diag.y_online, cfg.blend_weight);
  }
  ++st.frame_index;

  const auto center = decode_center(diag.y_final, pred.maps.offset.value(), kOutputStride);
  const double extent = static_cast<double>(crop.size());
  std::optional<BoundingBox> next;
  if (center) {
    diag.peak = center->peak;
    diag.peak_score = center->score;
    const auto [pw, ph] = decode_size(pred.maps.size.value(), center->peak, extent, extent);
    const auto [ix, iy] = crop.to_image(center->x, center->y);
    const auto [w, h] = smooth_size({st.box.w, st.box.h}, {pw * crop.scale, ph * crop.scale}, cfg.size_smoothing);
    const BoundingBox b{ix, iy, w, h};
    if (std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) && std::isfinite(b.h))
      next = tracker_detail::clamp_to_image(b, frame);
  }
  if (!next) {
    diag.lost = true;
    return {st.box, std::move(diag)};
  }
  st.box = *next;

  if (st.online) {
    OnlineState& os = *st.online;
    const std::size_t cells = st.window.window.dim(0);
    update_memory(os.memory, pred.mid.value(), tracker_detail::online_label(crop.box_to_patch(st.box), cells, kOutputStride));
    ++os.frames_since_update;
    if (os.frames_since_update >= cfg.update_interval || diag.peak_score > cfg.update_confidence) {
      auto solved = solve_cg(os.filter, os.memory, cfg.online_update);
      os.filter = std::move(solved.filter);
      os.degraded = solved.report.degraded;
      os.frames_since_update = 0;
      diag.online_updated = true;
    }
  }
  return {st.box, std::move(diag)};
}

/// Tracks every frame after the first; the first output echoes the init box.
template <typename FrameSource>
std::vector<BoundingBox> track_sequence(const TrackerNet& net, const TrackerConfig& cfg, std::size_t n_frames,
                                        FrameSource&& frame_at, const BoundingBox& init_box) {
  std::vector<BoundingBox> out;
  if (n_frames == 0) return out;
  TrackerState st = init(frame_at(0), init_box, net, cfg);
  out.push_back(init_box);
  for (std::size_t i = 1; i < n_frames; ++i) out.push_back(track_frame(st, frame_at(i)).box);
  return out;
}

}  // namespace trtr
