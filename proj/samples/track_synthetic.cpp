// Minimal library walk-through: generate a sequence, train briefly, track it
// frame by frame and print per-frame IoU.

#include <cstdio>

#include "trtr/trtr.hpp"

int main() {
  using namespace trtr;
  auto seq = generate_synthetic_sequence(7, 20, SyntheticSpec{});

  TrainConfig train;
  train.template_size = 64;
  train.search_size = 128;
  train.steps = 150;
  train.seed = 3;
  TrainResult trained = train_toy(train, seq, [](const StepLog& s) {
    if (s.step % 50 == 0) std::printf("step %zu loss %.4f\n", s.step, s.total);
  });

  TrackerConfig cfg;
  cfg.template_size = train.template_size;
  cfg.search_size = train.search_size;
  cfg.online = true;
  TrackerState state = init(seq.frames[0], seq.truth[0], trained.net, cfg);
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    TrackResult r = track_frame(state, seq.frames[i]);
    std::printf("frame %2zu  IoU %.3f  peak %.3f%s\n", i, iou(r.box, seq.truth[i]), r.diagnostics.peak_score,
                r.diagnostics.online_updated ? "  (filter updated)" : "");
  }
}
