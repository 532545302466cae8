#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "trtr/image.hpp"
#include "trtr/localize.hpp"
#include "trtr/random.hpp"

namespace trtr {

/// Parameters of a rendered toy sequence: a textured rectangle drifting over
/// a smooth textured background.
struct SyntheticSpec {
  std::size_t width = 128;
  std::size_t height = 128;
  std::size_t frames = 20;
  double target_w = 24.0;
  double target_h = 20.0;
  double start_x = -1.0;  // center; negative means image center
  double start_y = -1.0;
  double velocity_x = 1.5;  // pixels per frame
  double velocity_y = 0.8;
  double scale_rate = 0.0;  // relative size change per frame
  bool distractor = false;
  // Multiplicative brightness ramp applied from the middle frame on; the last
  // frame is scaled by (1 + brightness_drift).
  double brightness_drift = 0.0;
};

enum class PixelLabel : std::uint8_t { background = 0, target = 1, distractor = 2 };

struct SyntheticSequence {
  std::vector<Frame> frames;
  std::vector<BoundingBox> truth;
  std::vector<BoundingBox> distractors;                 // empty when disabled
  std::vector<std::vector<std::uint8_t>> pixel_labels;  // per frame, H*W PixelLabel values
};

namespace synth_detail {

struct Texture {
  std::array<double, 3> color_a{}, color_b{};
  double period = 6.0;
  bool stripes = false;
};

inline bool covers(const BoundingBox& b, double x, double y) {
  return x >= b.left() && x < b.right() && y >= b.top() && y < b.bottom();
}

// Texture coordinates are relative to the box so the pattern moves with it.
inline double texture_value(const Texture& t, const BoundingBox& b, std::size_t c, double x, double y) {
  const double u = (x - b.left()) / b.w * 4.0;
  const double v = (y - b.top()) / b.h * 4.0;
  bool a;
  if (t.stripes) {
    a = static_cast<long>(std::floor(u + v)) % 2 == 0;
  } else {
    a = (static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v))) % 2 == 0;
  }
  return a ? t.color_a[c] : t.color_b[c];
}

inline void reflect(double& pos, double& vel, double lo, double hi) {
  if (hi <= lo) {
    pos = (lo + hi) / 2.0;
    vel = 0.0;
    return;
  }
  if (pos < lo) {
    pos = 2 * lo - pos;
    vel = -vel;
  }
  if (pos > hi) {
    pos = 2 * hi - pos;
    vel = -vel;
  }
}

}  // namespace synth_detail

/// Deterministic in (seed, spec).
inline SyntheticSequence generate_synthetic_sequence(std::uint64_t seed, std::size_t n_frames, SyntheticSpec spec) {
  using namespace synth_detail;
  if (n_frames == 0) throw ParameterError("synthetic sequence needs at least one frame");
  if (spec.width == 0 || spec.height == 0) throw ParameterError("synthetic image extent must be positive");
  spec.frames = n_frames;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t w = spec.width, h = spec.height;
  const double wd = static_cast<double>(w), hd = static_cast<double>(h);

  // Background: a few low-frequency sinusoids per channel plus fixed noise.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;
  for (auto& ch : waves)
    for (int k = 0; k < 3; ++k)
      ch.push_back({(unit(rng) * 3.0 + 0.5) * 2.0 * std::numbers::pi / wd, (unit(rng) * 3.0 + 0.5) * 2.0 * std::numbers::pi / hd,
                    unit(rng) * 2.0 * std::numbers::pi, 0.06 + 0.06 * unit(rng)});
  Tensor background({3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double v = 0.45;
        for (const auto& wv : waves[c]) v += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
        v += 0.04 * (unit(rng) - 0.5);
        background(c, y, x) = std::clamp(v, 0.0, 1.0);
      }

  Texture target_tex;
  for (std::size_t c = 0; c < 3; ++c) {
    target_tex.color_a[c] = 0.85 + 0.15 * unit(rng);
    target_tex.color_b[c] = 0.05 + 0.15 * unit(rng);
  }
  target_tex.color_a[2] *= 0.3;  // warm checkerboard
  Texture distractor_tex;
  distractor_tex.stripes = true;
  for (std::size_t c = 0; c < 3; ++c) {
    distractor_tex.color_a[c] = 0.2 + 0.2 * unit(rng);
    distractor_tex.color_b[c] = 0.6 + 0.3 * unit(rng);
  }

  SyntheticSequence seq;
  double cx = spec.start_x >= 0.0 ? spec.start_x : wd / 2.0;
  double cy = spec.start_y >= 0.0 ? spec.start_y : hd / 2.0;
  double vx = spec.velocity_x, vy = spec.velocity_y;
  // Distractor starts in the opposite quadrant and moves against the target.
  double dcx = cx < wd / 2.0 ? wd * 0.75 : wd * 0.25;
  double dcy = cy < hd / 2.0 ? hd * 0.75 : hd * 0.25;
  double dvx = -vx, dvy = -vy;
  const double dw = spec.target_w * 0.9, dh = spec.target_h * 0.9;

  const std::size_t half = n_frames / 2;
  for (std::size_t k = 0; k < n_frames; ++k) {
    const double growth = std::pow(1.0 + spec.scale_rate, static_cast<double>(k));
    const double bw = spec.target_w * growth, bh = spec.target_h * growth;
    if (k > 0) {
      cx += vx;
      cy += vy;
      dcx += dvx;
      dcy += dvy;
    }
    reflect(cx, vx, bw / 2.0, wd - bw / 2.0);
    reflect(cy, vy, bh / 2.0, hd - bh / 2.0);
    reflect(dcx, dvx, dw / 2.0, wd - dw / 2.0);
    reflect(dcy, dvy, dh / 2.0, hd - dh / 2.0);
    const BoundingBox box{cx, cy, bw, bh};
    const BoundingBox dbox{dcx, dcy, dw, dh};

    double gain = 1.0;
    if (spec.brightness_drift != 0.0 && k >= half && n_frames > 1) {
      const double denom = static_cast<double>(std::max<std::size_t>(1, n_frames - 1 - half));
      gain = 1.0 + spec.brightness_drift * static_cast<double>(k - half) / denom;
    }

    Frame frame{background, k};
    std::vector<std::uint8_t> labels(w * h, static_cast<std::uint8_t>(PixelLabel::background));
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const Texture* tex = nullptr;
        const BoundingBox* owner = nullptr;
        // The target is drawn over the distractor.
        if (covers(box, px, py)) {
          tex = &target_tex;
          owner = &box;
          labels[y * w + x] = static_cast<std::uint8_t>(PixelLabel::target);
        } else if (spec.distractor && covers(dbox, px, py)) {
          tex = &distractor_tex;
          owner = &dbox;
          labels[y * w + x] = static_cast<std::uint8_t>(PixelLabel::distractor);
        }
        for (std::size_t c = 0; c < 3; ++c) {
          double v = tex ? texture_value(*tex, *owner, c, px, py) : frame.pixels(c, y, x);
          frame.pixels(c, y, x) = std::clamp(v * gain, 0.0, 1.0);
        }
      }
    }
    seq.frames.push_back(std::move(frame));
    seq.truth.push_back(box);
    if (spec.distractor) seq.distractors.push_back(dbox);
    seq.pixel_labels.push_back(std::move(labels));
  }
  return seq;
}

}  // namespace trtr
