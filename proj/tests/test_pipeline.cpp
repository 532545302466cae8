#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "trtr/metrics.hpp"
#include "trtr/sequence.hpp"
#include "trtr/synth.hpp"
#include "trtr/tracker.hpp"
#include "trtr/train.hpp"

using namespace trtr;
namespace fs = std::filesystem;

namespace {

Frame uniform_frame(std::size_t h, std::size_t w, double r, double g, double b) {
  Frame f{Tensor({3, h, w})};
  const double v[3] = {r, g, b};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) f.pixels(c, y, x) = v[c];
  return f;
}

ModelConfig tiny_model() { return {8, 2, 2, 1, 1, 8}; }

TrackerConfig tiny_tracker(bool online) {
  TrackerConfig cfg;
  cfg.template_size = 32;
  cfg.search_size = 64;
  cfg.online = online;
  cfg.online_init = {2, 3, 8};
  cfg.online_update = {1, 2, 8};
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("trtr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// ----------------------------------------------------------------------------- crops

TEST(Crop, InteriorBoxHasNoPadding) {
  Frame f = uniform_frame(200, 200, 0.2, 0.4, 0.6);
  CropResult c = crop_template(f, {100, 100, 20, 16}, 32);
  EXPECT_EQ(c.pad_mask.count(), 0u);
  EXPECT_EQ(c.size(), 32u);
  for (std::size_t y = 0; y < 32; ++y) EXPECT_NEAR(c.patch(1, y, 7), 0.4, 1e-15);
}

TEST(Crop, CornerBoxPadsWithChannelMeans) {
  Rng rng(1);
  Frame f{uniform_tensor({3, 40, 50}, 0, 1, rng)};
  const auto means = f.channel_means();
  CropResult c = crop_search(f, {3, 4, 10, 12}, 64, 32);
  std::size_t padded = 0;
  for (std::size_t v = 0; v < c.size(); ++v)
    for (std::size_t u = 0; u < c.size(); ++u) {
      const double x = c.origin_x + (u + 0.5) * c.scale, y = c.origin_y + (v + 0.5) * c.scale;
      const bool inside = x >= 0 && x < 50 && y >= 0 && y < 40;
      ASSERT_EQ(c.pad_mask.at(v, u), !inside) << v << "," << u;
      if (!inside) {
        ++padded;
        for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(c.patch(ch, v, u), means[ch]);
      }
    }
  EXPECT_GT(padded, 0u);
  // Upper-left exterior is padded, the lower-right interior is not.
  EXPECT_TRUE(c.pad_mask.at(0, 0));
  EXPECT_FALSE(c.pad_mask.at(c.size() - 1, c.size() - 1));
}

TEST(Crop, BilinearResamplingMatchesOracle) {
  Frame f = uniform_frame(30, 40, 0.1, 0.1, 0.1);
  for (std::size_t y = 0; y < 30; ++y)
    for (std::size_t x = 20; x < 40; ++x)
      for (std::size_t c = 0; c < 3; ++c) f.pixels(c, y, x) = 0.9;
  const BoundingBox box{20.3, 14.7, 11.0, 7.0};
  CropResult crop = crop_template(f, box, 24);
  const double scale = context_side(box) / 24.0;
  EXPECT_NEAR(crop.scale, scale, 1e-15);
  for (std::size_t v = 0; v < 24; ++v)
    for (std::size_t u = 0; u < 24; ++u) {
      const double x = box.cx + (u + 0.5 - 12.0) * scale, y = box.cy + (v + 0.5 - 12.0) * scale;
      if (crop.pad_mask.at(v, u)) continue;
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(crop.patch(c, v, u), oracle::bilinear(f.pixels, c, x, y), 1e-9);
    }
}

TEST(Crop, SearchCropIsCenteredOnPreviousBox) {
  Rng rng(2);
  Frame f{uniform_tensor({3, 300, 300}, 0, 1, rng)};
  const BoundingBox box{150.5, 141.25, 30, 22};
  CropResult c = crop_search(f, box, 255, 127);
  EXPECT_EQ(c.size(), 256u);
  auto [px, py] = c.to_patch(box.cx, box.cy);
  EXPECT_NEAR(px, 128.0, 1e-9);
  EXPECT_NEAR(py, 128.0, 1e-9);
  EXPECT_NEAR(c.scale, context_side(box) / 127.0, 1e-15);
}

TEST(Crop, LargerSearchContainsSmallerFieldOfView) {
  Rng rng(3);
  Frame f{uniform_tensor({3, 200, 200}, 0, 1, rng)};
  const BoundingBox box{90, 110, 20, 30};
  CropResult a = crop_search(f, box, 255, 127), b = crop_search(f, box, 320, 127);
  const double a_end = a.origin_x + a.size() * a.scale, b_end = b.origin_x + b.size() * b.scale;
  EXPECT_LT(b.origin_x, a.origin_x);
  EXPECT_LT(b.origin_y, a.origin_y);
  EXPECT_GT(b_end, a_end);
  EXPECT_GT(b.origin_y + b.size() * b.scale, a.origin_y + a.size() * a.scale);
}

TEST(Crop, CoordinateRoundTrip) {
  Rng rng(4);
  Frame f{uniform_tensor({3, 100, 120}, 0, 1, rng)};
  CropResult c = crop_search(f, {60.3, 47.9, 17, 23}, 280, 127);
  std::uniform_real_distribution<double> u(-50, 350);
  for (int i = 0; i < 100; ++i) {
    const double px = u(rng), py = u(rng);
    auto [ix, iy] = c.to_image(px, py);
    auto [qx, qy] = c.to_patch(ix, iy);
    EXPECT_NEAR(qx, px, 1e-9);
    EXPECT_NEAR(qy, py, 1e-9);
  }
  const BoundingBox b{31.0, 40.5, 12.0, 9.0};
  const BoundingBox back = c.box_to_image(c.box_to_patch(b));
  EXPECT_NEAR(back.cx, b.cx, 1e-9);
  EXPECT_NEAR(back.w, b.w, 1e-9);
}

TEST(Crop, RejectsBoxesOutsideImage) {
  Frame f = uniform_frame(20, 20, 0, 0, 0);
  EXPECT_THROW(crop_template(f, {-30, 5, 10, 10}, 32), TrackingError);
  EXPECT_THROW(crop_template(f, {5, 5, 0, 10}, 32), TrackingError);
  EXPECT_THROW(crop_search(f, {5, 5, 4, 4}, 16, 32), ConfigError);
}

TEST(Crop, CellMaskUsesCellCenters) {
  Frame f = uniform_frame(64, 64, 0.5, 0.5, 0.5);
  CropResult c = crop_search(f, {4, 30, 8, 8}, 64, 32);
  GridMask m = cell_mask(c);
  ASSERT_EQ(m.rows, 8u);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(m.at(r, k), c.pad_mask.at(8 * r + 4, 8 * k + 4));
  EXPECT_GT(m.count(), 0u);
}

// ----------------------------------------------------------------------------- backbone

TEST(Backbone, OutputStrideIsEight) {
  Rng rng(5);
  BackboneWeights w = BackboneWeights::random(8, 16, rng);
  BackboneOutput a = backbone_forward(constant(uniform_tensor({3, 64, 64}, 0, 1, rng)), w);
  EXPECT_EQ(a.out.shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(a.mid.shape(), (Shape{8, 8, 8}));
  BackboneOutput b = backbone_forward(constant(uniform_tensor({3, 128, 128}, 0, 1, rng)), w);
  EXPECT_EQ(b.out.shape(), (Shape{16, 16, 16}));
  EXPECT_THROW(backbone_forward(constant(Tensor({3, 60, 60})), w), ConfigError);
}

TEST(Backbone, TranslationCovariance) {
  Rng rng(6);
  BackboneWeights w = BackboneWeights::random(8, 16, rng);
  Tensor x = uniform_tensor({3, 72, 72}, 0, 1, rng);
  Tensor left({3, 64, 64}), right({3, 64, 64});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t k = 0; k < 64; ++k) {
        left(c, y, k) = x(c, y, k);
        right(c, y, k) = x(c, y, k + 8);
      }
  Tensor a = backbone_forward(constant(left), w).out.value(), b = backbone_forward(constant(right), w).out.value();
  double worst = 0.0;
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t y = 2; y < 6; ++y)
      for (std::size_t k = 2; k < 5; ++k) worst = std::max(worst, std::abs(b(c, y, k) - a(c, y, k + 1)));
  EXPECT_LT(worst, 1e-6);
}

// ----------------------------------------------------------------------------- synthetic data

TEST(Synth, SameSeedSamePixels) {
  SyntheticSpec spec;
  spec.distractor = true;
  auto a = generate_synthetic_sequence(11, 5, spec), b = generate_synthetic_sequence(11, 5, spec);
  ASSERT_EQ(a.frames.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.frames[i].pixels, b.frames[i].pixels);
    EXPECT_EQ(a.truth[i], b.truth[i]);
  }
  auto c = generate_synthetic_sequence(12, 5, spec);
  EXPECT_FALSE(a.frames[0].pixels == c.frames[0].pixels);
}

TEST(Synth, ZeroVelocityKeepsBoxFixed) {
  SyntheticSpec spec;
  spec.velocity_x = spec.velocity_y = 0.0;
  auto s = generate_synthetic_sequence(3, 8, spec);
  for (const auto& b : s.truth) EXPECT_EQ(b, s.truth[0]);
  EXPECT_EQ(s.truth[0].cx, 64.0);
  EXPECT_EQ(s.truth[0].w, 24.0);
  EXPECT_THROW(generate_synthetic_sequence(3, 0, spec), ParameterError);
}

TEST(Synth, DistractorLabelsAreDisjointAndCounted) {
  SyntheticSpec spec;
  spec.distractor = true;
  auto s = generate_synthetic_sequence(21, 6, spec);
  ASSERT_EQ(s.distractors.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    std::size_t target = 0, distractor = 0, expect_t = 0, expect_d = 0;
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const BoundingBox &t = s.truth[k], &d = s.distractors[k];
        const bool in_t = px >= t.left() && px < t.right() && py >= t.top() && py < t.bottom();
        const bool in_d = px >= d.left() && px < d.right() && py >= d.top() && py < d.bottom();
        expect_t += in_t;
        expect_d += in_d && !in_t;
        const auto label = static_cast<PixelLabel>(s.pixel_labels[k][y * spec.width + x]);
        target += label == PixelLabel::target;
        distractor += label == PixelLabel::distractor;
      }
    EXPECT_EQ(target, expect_t);
    EXPECT_EQ(distractor, expect_d);
    EXPECT_GT(target, 0u);
    EXPECT_GT(distractor, 0u);
  }
}

TEST(Synth, BrightnessDriftScalesLateFrames) {
  SyntheticSpec spec;
  spec.velocity_x = spec.velocity_y = 0.0;
  auto plain = generate_synthetic_sequence(5, 9, spec);
  spec.brightness_drift = -0.5;
  auto dim = generate_synthetic_sequence(5, 9, spec);
  EXPECT_EQ(plain.frames[3].pixels, dim.frames[3].pixels);
  EXPECT_NEAR(dim.frames[8].pixels[100], 0.5 * plain.frames[8].pixels[100], 1e-12);
}

// ----------------------------------------------------------------------------- metrics

TEST(Metrics, OverlapArithmetic) {
  EXPECT_NEAR(iou(BoundingBox::from_top_left(0, 0, 2, 2), BoundingBox::from_top_left(1, 1, 2, 2)), 1.0 / 7.0, 1e-15);
  EXPECT_EQ(iou(BoundingBox::from_top_left(0, 0, 2, 2), BoundingBox::from_top_left(5, 5, 2, 2)), 0.0);
  const BoundingBox b = BoundingBox::from_top_left(3, 4, 5, 6);
  EXPECT_EQ(iou(b, b), 1.0);
}

TEST(Metrics, PerfectTrackScoresOne) {
  std::vector<BoundingBox> boxes{{10, 10, 4, 4}, {12, 11, 5, 3}, {30, 20, 8, 8}};
  Metrics m = evaluate(boxes, boxes);
  EXPECT_EQ(m.mean_iou, 1.0);
  EXPECT_EQ(m.auc, 1.0);
  EXPECT_EQ(m.success_50, 1.0);
  EXPECT_EQ(m.success_curve.size(), 21u);
  EXPECT_THROW(evaluate(boxes, {boxes[0]}), InputError);
}

TEST(Metrics, DisjointTrackScoresZero) {
  std::vector<BoundingBox> a{{10, 10, 4, 4}}, b{{50, 50, 4, 4}};
  Metrics m = evaluate(a, b);
  EXPECT_EQ(m.mean_iou, 0.0);
  EXPECT_EQ(m.auc, 0.0);
}

TEST(Metrics, IouMatchesRasterOracle) {
  Rng rng(7);
  std::uniform_int_distribution<int> pos(0, 20), ext(1, 15);
  for (int i = 0; i < 300; ++i) {
    const int ax = pos(rng), ay = pos(rng), aw = ext(rng), ah = ext(rng);
    const int bx = pos(rng), by = pos(rng), bw = ext(rng), bh = ext(rng);
    const double v = iou(BoundingBox::from_top_left(ax, ay, aw, ah), BoundingBox::from_top_left(bx, by, bw, bh));
    const double area = std::min(aw * ah, bw * bh);
    EXPECT_NEAR(v, oracle::raster_iou(ax, ay, aw, ah, bx, by, bw, bh), 1.0 / area);
  }
}

TEST(Metrics, SuccessCurveAndAuc) {
  std::vector<BoundingBox> truth(4, BoundingBox::from_top_left(0, 0, 10, 10));
  std::vector<BoundingBox> pred{BoundingBox::from_top_left(0, 0, 10, 10), BoundingBox::from_top_left(0, 0, 10, 5),
                                BoundingBox::from_top_left(0, 0, 10, 2), BoundingBox::from_top_left(50, 50, 1, 1)};
  Metrics m = evaluate(pred, truth);
  EXPECT_NEAR(m.mean_iou, (1.0 + 0.5 + 0.2) / 4, 1e-15);
  EXPECT_EQ(m.success_50, 0.5);
  EXPECT_EQ(m.success_75, 0.25);
  EXPECT_EQ(m.success_curve[0], 0.75);
  EXPECT_EQ(m.success_curve[20], 0.25);
  double area = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const double t = i / 20.0;
    area += ((1.0 >= t) + (0.5 >= t) + (0.2 >= t)) / 4.0;
  }
  EXPECT_NEAR(m.auc, area / 21.0, 1e-15);
}

// ----------------------------------------------------------------------------- files

TEST(Files, BoxLineFormats) {
  const BoundingBox a = parse_box_line("10,20,30,40");
  EXPECT_EQ(a, BoundingBox::from_top_left(10, 20, 30, 40));
  EXPECT_EQ(parse_box_line("10\t20\t30\t40"), a);
  EXPECT_EQ(parse_box_line("10 20 30 40\r"), a);
  EXPECT_THROW(parse_box_line("10,20,30"), InputError);
}

TEST(Files, SequenceRoundTrip) {
  const fs::path dir = scratch_dir("seq");
  auto s = generate_synthetic_sequence(4, 3, SyntheticSpec{});
  write_sequence(dir.string(), s.frames, s.truth);
  EXPECT_TRUE(fs::exists(dir / "00001.ppm"));
  Sequence seq = open_sequence(dir.string());
  ASSERT_EQ(seq.size(), 3u);
  ASSERT_EQ(seq.truth.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(seq.truth[i].cx, s.truth[i].cx, 1e-12);
    EXPECT_NEAR(seq.truth[i].h, s.truth[i].h, 1e-12);
    Frame f = seq.frame(i);
    ASSERT_EQ(f.pixels.shape(), s.frames[i].pixels.shape());
    for (std::size_t k = 0; k < f.pixels.size(); k += 97) EXPECT_NEAR(f.pixels[k], s.frames[i].pixels[k], 0.5 / 255 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST(Files, GrayImagesAreReplicated) {
  const fs::path dir = scratch_dir("pgm");
  Tensor map({2, 3});
  for (std::size_t i = 0; i < 6; ++i) map[i] = static_cast<double>(i);
  write_pgm((dir / "a.pgm").string(), map);
  Frame f = read_pnm((dir / "a.pgm").string());
  EXPECT_EQ(f.pixels.shape(), (Shape{3, 2, 3}));
  EXPECT_EQ(f.pixels(0, 1, 2), 1.0);
  EXPECT_EQ(f.pixels(2, 0, 0), 0.0);
  EXPECT_EQ(f.pixels(1, 1, 2), f.pixels(0, 1, 2));
  fs::remove_all(dir);
}

TEST(Files, RowScaledPgmStretchesEachRow) {
  const fs::path dir = scratch_dir("pgmrows");
  Tensor a = Tensor::matrix({{0.1, 0.2, 0.7}, {0.3, 0.3, 0.4}});
  write_pgm((dir / "a.pgm").string(), a, PgmScaling::per_row);
  Frame f = read_pnm((dir / "a.pgm").string());
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(f.pixels(0, r, 2), 1.0);
    EXPECT_EQ(f.pixels(0, r, 0), 0.0);
  }
  EXPECT_NEAR(f.pixels(0, 0, 1), std::round(255.0 / 6) / 255, 1e-12);
  fs::remove_all(dir);
}

TEST(Files, AnnotationCountMustMatchFrames) {
  const fs::path dir = scratch_dir("badseq");
  auto s = generate_synthetic_sequence(4, 2, SyntheticSpec{});
  write_sequence(dir.string(), s.frames, {s.truth[0]});
  EXPECT_THROW(open_sequence(dir.string()), InputError);
  EXPECT_THROW(open_sequence((dir / "missing").string()), InputError);
  fs::remove_all(dir);
}

TEST(Files, ModelCheckpointRoundTrip) {
  const fs::path dir = scratch_dir("ckpt");
  ModelConfig cfg{8, 2, 3, 2, 3, 12};
  TrackerNet net = TrackerNet::create(cfg, 9);
  save_checkpoint((dir / "m.ckpt").string(), net.parameters());
  TrackerNet back = load_model((dir / "m.ckpt").string());
  EXPECT_EQ(back.config.d, 8u);
  EXPECT_EQ(back.config.heads, 2u);
  EXPECT_EQ(back.config.ffn_multiplier, 3u);
  EXPECT_EQ(back.config.encoder_layers, 2u);
  EXPECT_EQ(back.config.decoder_layers, 3u);
  EXPECT_EQ(back.config.mid_channels, 12u);
  auto a = net.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].value.value(), b[i].value.value());
  }
  fs::remove_all(dir);
}

// ----------------------------------------------------------------------------- tracker

TEST(Tracker, InitEchoesBoxAndIsDeterministic) {
  auto s = generate_synthetic_sequence(2, 3, SyntheticSpec{});
  TrackerNet net = TrackerNet::create(tiny_model(), 1);
  TrackerState a = init(s.frames[0], s.truth[0], net, tiny_tracker(false));
  TrackerState b = init(s.frames[0], s.truth[0], net, tiny_tracker(false));
  EXPECT_EQ(a.box, s.truth[0]);
  EXPECT_FALSE(a.online);
  EXPECT_EQ(a.template_memory.memory.value(), b.template_memory.memory.value());
  EXPECT_EQ(a.window.window.shape(), (Shape{8, 8}));
  auto out = track_sequence(net, tiny_tracker(false), 1, [&](std::size_t i) { return s.frames[i]; }, s.truth[0]);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], s.truth[0]);
}

TEST(Tracker, OfflineModeEqualsHandWiredPipeline) {
  auto s = generate_synthetic_sequence(3, 6, SyntheticSpec{});
  TrackerNet net = TrackerNet::create(tiny_model(), 2);
  const TrackerConfig cfg = tiny_tracker(false);
  auto tracked = track_sequence(net, cfg, 6, [&](std::size_t i) { return s.frames[i]; }, s.truth[0]);

  // The same steps wired by hand without any online state.
  NoGradGuard guard;
  EncoderOutput mem = encode_template(net, crop_template(s.frames[0], s.truth[0], 32), true);
  CosineWindow win = make_cosine_window(8, 8, cfg.window_influence);
  BoundingBox box = s.truth[0];
  for (std::size_t i = 1; i < 6; ++i) {
    CropResult crop = crop_search(s.frames[i], box, 64, 32);
    SearchPrediction p = predict_search(net, mem, crop, true);
    auto c = decode_center(apply_window(p.maps.y.value(), win), p.maps.offset.value(), 8);
    ASSERT_TRUE(c);
    auto [pw, ph] = decode_size(p.maps.size.value(), c->peak, 64, 64);
    auto [ix, iy] = crop.to_image(c->x, c->y);
    auto [w, h] = smooth_size({box.w, box.h}, {pw * crop.scale, ph * crop.scale}, cfg.size_smoothing);
    box = tracker_detail::clamp_to_image({ix, iy, w, h}, s.frames[i]);
    EXPECT_EQ(tracked[i], box) << "frame " << i;
  }
}

TEST(Tracker, OnlineBranchLeavesOfflineMapsUntouched) {
  auto s = generate_synthetic_sequence(4, 4, SyntheticSpec{});
  TrackerNet net = TrackerNet::create(tiny_model(), 3);
  TrackerState off = init(s.frames[0], s.truth[0], net, tiny_tracker(false));
  TrackerState on = init(s.frames[0], s.truth[0], net, tiny_tracker(true));
  ASSERT_TRUE(on.online);
  EXPECT_EQ(on.online->memory.size(), 5u);
  EXPECT_EQ(on.template_memory.memory.value(), off.template_memory.memory.value());
  TrackResult a = track_frame(off, s.frames[1]), b = track_frame(on, s.frames[1]);
  EXPECT_EQ(a.diagnostics.y, b.diagnostics.y);
  EXPECT_EQ(a.diagnostics.y_window, b.diagnostics.y_window);
  ASSERT_TRUE(b.diagnostics.y_online);
  EXPECT_FALSE(a.diagnostics.y_online);
  EXPECT_EQ(b.diagnostics.y_final, blend(b.diagnostics.y_window, *b.diagnostics.y_online, 0.6));
  EXPECT_EQ(on.online->memory.size(), 6u);
}

TEST(Tracker, FullWindowPinsPeakToCenter) {
  auto s = generate_synthetic_sequence(5, 4, SyntheticSpec{});
  TrackerNet net = TrackerNet::create(tiny_model(), 4);
  TrackerConfig cfg = tiny_tracker(false);
  cfg.window_influence = 1.0;
  TrackerState st = init(s.frames[0], s.truth[0], net, cfg);
  for (std::size_t i = 1; i < 4; ++i) {
    const BoundingBox prev = st.box;
    const double cell = 8.0 * context_side(prev) / 32.0;
    TrackResult r = track_frame(st, s.frames[i]);
    EXPECT_EQ(r.diagnostics.peak, (GridPoint{4, 4}));
    EXPECT_GE(r.box.cx, prev.cx - 1e-9);
    EXPECT_LT(r.box.cx, prev.cx + cell);
    EXPECT_GE(r.box.cy, prev.cy - 1e-9);
    EXPECT_LT(r.box.cy, prev.cy + cell);
  }
}

TEST(Tracker, RepeatedRunsAreBitIdentical) {
  SyntheticSpec spec;
  spec.distractor = true;
  auto s = generate_synthetic_sequence(6, 8, spec);
  TrackerNet net = TrackerNet::create(tiny_model(), 5);
  for (bool online : {false, true}) {
    auto a = track_sequence(net, tiny_tracker(online), 8, [&](std::size_t i) { return s.frames[i]; }, s.truth[0]);
    auto b = track_sequence(net, tiny_tracker(online), 8, [&](std::size_t i) { return s.frames[i]; }, s.truth[0]);
    EXPECT_EQ(a, b);
  }
}

TEST(Tracker, NonFiniteFrameIsFlaggedLost) {
  auto s = generate_synthetic_sequence(7, 2, SyntheticSpec{});
  TrackerNet net = TrackerNet::create(tiny_model(), 6);
  TrackerState st = init(s.frames[0], s.truth[0], net, tiny_tracker(false));
  Frame bad = s.frames[1];
  for (double& v : bad.pixels.data()) v = std::numeric_limits<double>::quiet_NaN();
  TrackResult r = track_frame(st, bad);
  EXPECT_TRUE(r.diagnostics.lost);
  EXPECT_EQ(r.box, s.truth[0]);
}

TEST(Tracker, ConfigValidation) {
  TrackerConfig cfg = tiny_tracker(false);
  cfg.search_size = 16;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_tracker(false);
  cfg.blend_weight = 2.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// ----------------------------------------------------------------------------- training

TEST(Training, FixedSeedGivesIdenticalLossCurve) {
  auto s = generate_synthetic_sequence(8, 6, SyntheticSpec{});
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.template_size = 32;
  cfg.search_size = 64;
  cfg.steps = 4;
  cfg.batch = 2;
  cfg.seed = 17;
  TrainResult a = train_toy(cfg, s), b = train_toy(cfg, s);
  ASSERT_EQ(a.log.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.log[i].total, b.log[i].total);
  auto pa = a.net.parameters(), pb = b.net.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].value.value(), pb[i].value.value());
}

TEST(Training, NonFiniteLossAborts) {
  auto s = generate_synthetic_sequence(9, 3, SyntheticSpec{});
  for (auto& f : s.frames)
    for (double& v : f.pixels.data()) v = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.template_size = 32;
  cfg.search_size = 64;
  cfg.steps = 2;
  EXPECT_THROW(train_toy(cfg, s), TrainingDivergence);
}

TEST(Training, ZeroRegressionWeightsFreezeRegressionHeads) {
  auto s = generate_synthetic_sequence(10, 4, SyntheticSpec{});
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.template_size = 32;
  cfg.search_size = 64;
  cfg.steps = 3;
  cfg.batch = 1;
  cfg.weights = {0.0, 0.0};
  TrainResult r = train_toy(cfg, s);
  TrackerNet fresh = TrackerNet::create(cfg.model, cfg.seed);
  EXPECT_EQ(r.net.heads.offset.w3.value(), fresh.heads.offset.w3.value());
  EXPECT_EQ(r.net.heads.size.b3.value(), fresh.heads.size.b3.value());
  EXPECT_FALSE(r.net.heads.classification.w3.value() == fresh.heads.classification.w3.value());
  for (const auto& e : r.log) EXPECT_EQ(e.total, e.classification);
}
