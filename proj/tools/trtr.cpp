// Command-line front end: gradient checks, synthetic data, toy training,
// tracking, evaluation and map dumps.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "trtr/trtr.hpp"

using namespace trtr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::size_t> kSearchPresets{255, 280, 320, 350, 380};

struct SizeOptions {
  std::size_t template_size = 127;
  std::size_t search_size = 255;
  std::string pe_mask = "on";

  void add(CLI::App* app) {
    app->add_option("--template-size", template_size, "Template crop side in pixels")->capture_default_str();
    app->add_option("--search-size", search_size, "Search crop side in pixels (presets 255, 280, 320, 350, 380)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--pe-mask", pe_mask, "Zero positional codes on padded cells")
        ->capture_default_str()
        ->check(CLI::IsMember({"on", "off"}));
  }
};

struct TrackOptions {
  SizeOptions sizes;
  std::string ckpt, seq_dir, online = "off";
  std::uint64_t seed = 0;
  double window = kDefaultWindowInfluence;

  void add(CLI::App* app) {
    sizes.add(app);
    app->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    app->add_option("--seq", seq_dir, "Sequence directory")->required()->check(CLI::ExistingDirectory);
    app->add_option("--online", online, "Enable the online classification branch")
        ->capture_default_str()
        ->check(CLI::IsMember({"on", "off"}));
    app->add_option("--seed", seed, "Online filter initialization seed")->capture_default_str();
    app->add_option("--window", window, "Cosine window influence")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  }

  TrackerConfig config() const {
    TrackerConfig cfg;
    cfg.template_size = sizes.template_size;
    cfg.search_size = sizes.search_size;
    cfg.pe_mask = sizes.pe_mask == "on";
    cfg.online = online == "on";
    cfg.seed = seed;
    cfg.window_influence = window;
    return cfg;
  }
};

json metrics_json(const Metrics& m) {
  return json{{"frames", m.per_frame_iou.size()}, {"mean_iou", m.mean_iou},     {"success_50", m.success_50},
              {"success_75", m.success_75},       {"auc", m.auc},               {"success_curve", m.success_curve},
              {"per_frame_iou", m.per_frame_iou}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os << j.dump(2) << '\n';
}

void warn_non_preset(std::size_t search_size) {
  if (std::find(kSearchPresets.begin(), kSearchPresets.end(), search_size) == kSearchPresets.end())
    std::cerr << "note: search size " << search_size << " is not one of the presets 255/280/320/350/380\n";
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, std::size_t instances, const std::string& out) {
  auto reports = run_gradcheck_suite(standard_gradcheck_suite(seed, instances));
  std::size_t failed = 0;
  json j = json::array();
  for (const auto& r : reports) {
    std::printf("%-4s %-28s components=%-5zu max_rel=%.3e max_abs=%.3e %.3fs\n", r.passed() ? "ok" : "FAIL",
                r.name.c_str(), r.checked, r.max_rel_err, r.max_abs_err, r.seconds);
    if (!r.passed()) {
      ++failed;
      std::printf("     worst: %s\n", r.worst.c_str());
    }
    j.push_back({{"name", r.name},
                 {"checked", r.checked},
                 {"failures", r.failures},
                 {"max_rel_err", r.max_rel_err},
                 {"max_abs_err", r.max_abs_err},
                 {"passed", r.passed()}});
  }
  if (!out.empty()) write_json(out, j);
  std::printf("%zu/%zu cases passed\n", reports.size() - failed, reports.size());
  return failed ? 1 : 0;
}

struct SynthOptions {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t frames = 20;
  SyntheticSpec spec;
};

int cmd_synth(const SynthOptions& o) {
  auto seq = generate_synthetic_sequence(o.seed, o.frames, o.spec);
  write_sequence(o.out, seq.frames, seq.truth);
  std::printf("wrote %zu frames to %s\n", seq.frames.size(), o.out.c_str());
  return 0;
}

struct TrainOptions {
  SizeOptions sizes;
  std::string seq_dir, ckpt, log;
  std::uint64_t seed = 0, synth_seed = 7;
  std::size_t frames = 20, steps = 500, batch = 4, enc_layers = 1, dec_layers = 1, d = 32, heads = 4;
  double lr = 2e-3, scale_jitter = 0.1;
};

int cmd_train(const TrainOptions& o) {
  TrainConfig cfg;
  cfg.template_size = o.sizes.template_size;
  cfg.search_size = o.sizes.search_size;
  cfg.pe_mask = o.sizes.pe_mask == "on";
  cfg.steps = o.steps;
  cfg.batch = o.batch;
  cfg.seed = o.seed;
  cfg.adam.learning_rate = o.lr;
  cfg.scale_jitter = o.scale_jitter;
  cfg.model.d = o.d;
  cfg.model.heads = o.heads;
  cfg.model.encoder_layers = o.enc_layers;
  cfg.model.decoder_layers = o.dec_layers;

  std::vector<Frame> frames;
  std::vector<BoundingBox> truth;
  if (!o.seq_dir.empty()) {
    Sequence seq = open_sequence(o.seq_dir);
    if (seq.truth.size() != seq.size()) throw InputError(o.seq_dir + ": training needs one ground-truth box per frame");
    for (std::size_t i = 0; i < seq.size(); ++i) frames.push_back(seq.frame(i));
    truth = seq.truth;
  } else {
    auto s = generate_synthetic_sequence(o.synth_seed, o.frames, SyntheticSpec{});
    frames = std::move(s.frames);
    truth = std::move(s.truth);
  }

  std::ofstream log;
  if (!o.log.empty()) {
    log.open(o.log);
    if (!log) throw InputError("cannot write " + o.log);
    log.precision(17);
    log << "step,total,classification,offset,size\n";
  }
  const std::size_t every = std::max<std::size_t>(1, o.steps / 20);
  TrainResult res = train_toy(cfg, frames, truth, [&](const StepLog& s) {
    if (log) log << s.step << ',' << s.total << ',' << s.classification << ',' << s.offset << ',' << s.size << '\n';
    if (s.step % every == 0 || s.step == 1)
      std::printf("step %5zu  loss %.6f  (cls %.6f off %.6f size %.6f)\n", s.step, s.total, s.classification, s.offset,
                  s.size);
  });
  save_checkpoint(o.ckpt, res.net.parameters());
  std::printf("saved %s (%zu parameters)\n", o.ckpt.c_str(), parameter_count(res.net.parameters()));
  return 0;
}

int cmd_track(const TrackOptions& o, const std::string& out, const std::string& metrics_out) {
  const TrackerConfig cfg = o.config();
  warn_non_preset(cfg.search_size);
  TrackerNet net = load_model(o.ckpt);
  Sequence seq = open_sequence(o.seq_dir);
  if (seq.truth.empty()) throw InputError(o.seq_dir + ": no ground truth to take the first box from");
  auto boxes = track_sequence(net, cfg, seq.size(), [&](std::size_t i) { return seq.frame(i); }, seq.truth[0]);
  write_boxes(out, boxes);
  std::printf("tracked %zu frames -> %s\n", boxes.size(), out.c_str());
  if (seq.truth.size() == boxes.size()) {
    Metrics m = evaluate(boxes, seq.truth);
    std::printf("mean IoU %.4f  success@0.5 %.4f  AUC %.4f\n", m.mean_iou, m.success_50, m.auc);
    if (!metrics_out.empty()) write_json(metrics_out, metrics_json(m));
  } else if (!metrics_out.empty()) {
    throw InputError("metrics requested but the ground truth does not cover every frame");
  }
  return 0;
}

int cmd_eval(const std::string& results, const std::string& truth_path, const std::string& out) {
  Metrics m = evaluate(read_boxes(results), read_boxes(truth_path));
  const json j = metrics_json(m);
  if (out.empty())
    std::cout << j.dump(2) << '\n';
  else
    write_json(out, j);
  return 0;
}

// Runs the tracker up to `frame` and returns the state after that frame.
struct Replay {
  TrackerState state;
  TrackResult last;
};

Replay replay_to(const TrackOptions& o, std::size_t frame, AttentionTrace* trace) {
  TrackerNet net = load_model(o.ckpt);
  Sequence seq = open_sequence(o.seq_dir);
  if (seq.truth.empty()) throw InputError(o.seq_dir + ": no ground truth to take the first box from");
  if (frame == 0 || frame >= seq.size())
    throw ParameterError("frame must lie in [1, " + std::to_string(seq.size() - 1) + "]");
  Replay r{init(seq.frame(0), seq.truth[0], net, o.config()), {}};
  for (std::size_t i = 1; i <= frame; ++i) r.last = track_frame(r.state, seq.frame(i), i == frame ? trace : nullptr);
  return r;
}

void dump_map(const fs::path& dir, const std::string& stem, const Tensor& map,
              PgmScaling scaling = PgmScaling::whole_map) {
  write_csv((dir / (stem + ".csv")).string(), map);
  write_pgm((dir / (stem + ".pgm")).string(), map, scaling);
}

int cmd_dump_attn(const TrackOptions& o, std::size_t frame, const std::string& out_dir, const std::string& module) {
  AttentionTrace trace;
  replay_to(o, frame, &trace);
  // The template encoder runs at init; repeat it traced so its maps are dumped too.
  TrackerNet net = load_model(o.ckpt);
  Sequence seq = open_sequence(o.seq_dir);
  {
    NoGradGuard guard;
    AttentionTrace enc;
    encode_template(net, crop_template(seq.frame(0), seq.truth[0], o.sizes.template_size), o.sizes.pe_mask == "on",
                    &enc);
    trace.entries.insert(trace.entries.begin(), enc.entries.begin(), enc.entries.end());
  }
  fs::create_directories(out_dir);
  std::size_t n = 0;
  for (const auto& e : trace.entries) {
    if (!module.empty() && e.module != module) continue;
    dump_map(out_dir, e.module + ".head" + std::to_string(e.head), e.weights, PgmScaling::per_row);
    ++n;
  }
  if (n == 0) throw ParameterError("no attention maps matched '" + module + "'");
  std::printf("wrote %zu attention maps to %s\n", n, out_dir.c_str());
  return 0;
}

int cmd_dump_heatmap(const TrackOptions& o, std::size_t frame, const std::string& out_dir) {
  Replay r = replay_to(o, frame, nullptr);
  const Diagnostics& d = r.last.diagnostics;
  fs::create_directories(out_dir);
  dump_map(out_dir, "raw", d.y);
  dump_map(out_dir, "windowed", d.y_window);
  dump_map(out_dir, "final", d.y_final);
  if (d.y_online) dump_map(out_dir, "online", *d.y_online);
  std::printf("frame %zu: peak (%zu, %zu) score %.4f%s -> %s\n", frame, d.peak.row, d.peak.col, d.peak_score,
              d.lost ? " [lost]" : "", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer-based single-object tracker"};
  app.require_subcommand(1);

  std::uint64_t gc_seed = 1;
  std::size_t gc_instances = 3;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
  gc->add_option("--instances", gc_instances, "Random instances per case")->capture_default_str();
  gc->add_option("--json", gc_out, "Write the reports as JSON");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Write a synthetic sequence directory");
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--seed", so.seed, "Random seed")->capture_default_str();
  synth->add_option("--frames", so.frames, "Number of frames")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--width", so.spec.width, "Frame width")->capture_default_str();
  synth->add_option("--height", so.spec.height, "Frame height")->capture_default_str();
  synth->add_option("--velocity-x", so.spec.velocity_x, "Horizontal speed in pixels per frame")->capture_default_str();
  synth->add_option("--velocity-y", so.spec.velocity_y, "Vertical speed in pixels per frame")->capture_default_str();
  synth->add_option("--scale-rate", so.spec.scale_rate, "Relative size change per frame")->capture_default_str();
  synth->add_option("--drift", so.spec.brightness_drift, "Target brightness change over the sequence")
      ->capture_default_str();
  synth->add_flag("--distractor", so.spec.distractor, "Add a look-alike distractor");

  TrainOptions to;
  auto* train = app.add_subcommand("train-toy", "Train a model on one sequence");
  to.sizes.add(train);
  train->add_option("--seq", to.seq_dir, "Sequence directory (default: built-in synthetic sequence)")
      ->check(CLI::ExistingDirectory);
  train->add_option("--synth-seed", to.synth_seed, "Seed of the built-in synthetic sequence")->capture_default_str();
  train->add_option("--frames", to.frames, "Frames of the built-in synthetic sequence")->capture_default_str();
  train->add_option("--ckpt", to.ckpt, "Output checkpoint")->required();
  train->add_option("--steps", to.steps, "Optimizer steps")->capture_default_str();
  train->add_option("--batch", to.batch, "Search crops per step")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", to.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--scale-jitter", to.scale_jitter, "Log-scale range of crop rescaling during training")
      ->capture_default_str();
  train->add_option("--enc-layers", to.enc_layers, "Encoder layers")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--dec-layers", to.dec_layers, "Decoder layers")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--dim", to.d, "Model width")->capture_default_str();
  train->add_option("--heads", to.heads, "Attention heads")->capture_default_str();
  train->add_option("--seed", to.seed, "Initialization and sampling seed")->capture_default_str();
  train->add_option("--log", to.log, "Write per-step losses as CSV");

  TrackOptions tk;
  std::string track_out, track_metrics;
  auto* track = app.add_subcommand("track", "Track a sequence from its first ground-truth box");
  tk.add(track);
  track->add_option("--out", track_out, "Output results file (x,y,w,h per line)")->required();
  track->add_option("--metrics", track_metrics, "Write metrics JSON against the sequence ground truth");

  std::string ev_results, ev_truth, ev_seq, ev_out;
  auto* ev = app.add_subcommand("eval", "Score a results file against ground truth");
  ev->add_option("--results", ev_results, "Results file")->required()->check(CLI::ExistingFile);
  auto* truth_opt = ev->add_option("--truth", ev_truth, "Ground-truth file")->check(CLI::ExistingFile);
  auto* seq_opt = ev->add_option("--seq", ev_seq, "Sequence directory holding the ground truth")
                      ->check(CLI::ExistingDirectory);
  truth_opt->excludes(seq_opt);
  ev->add_option("--out", ev_out, "Write metrics JSON here instead of stdout");

  TrackOptions da;
  std::size_t da_frame = 1;
  std::string da_out, da_module;
  auto* dump_attn = app.add_subcommand("dump-attn", "Dump attention maps for one frame as CSV and PGM");
  da.add(dump_attn);
  dump_attn->add_option("--frame", da_frame, "Frame index (>= 1)")->capture_default_str();
  dump_attn->add_option("--out-dir", da_out, "Output directory")->required();
  dump_attn->add_option("--module", da_module, "Only this module, e.g. decoder.0.cross_attn");

  TrackOptions dh;
  std::size_t dh_frame = 1;
  std::string dh_out;
  auto* dump_heat = app.add_subcommand("dump-heatmap", "Dump classification maps for one frame as CSV and PGM");
  dh.add(dump_heat);
  dump_heat->add_option("--frame", dh_frame, "Frame index (>= 1)")->capture_default_str();
  dump_heat->add_option("--out-dir", dh_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gc) return cmd_gradcheck(gc_seed, gc_instances, gc_out);
    if (*synth) return cmd_synth(so);
    if (*train) return cmd_train(to);
    if (*track) return cmd_track(tk, track_out, track_metrics);
    if (*ev) {
      if (ev_truth.empty() && ev_seq.empty()) throw InputError("eval needs --truth or --seq");
      return cmd_eval(ev_results, ev_truth.empty() ? (fs::path(ev_seq) / kGroundTruthFile).string() : ev_truth, ev_out);
    }
    if (*dump_attn) return cmd_dump_attn(da, da_frame, da_out, da_module);
    if (*dump_heat) return cmd_dump_heatmap(dh, dh_frame, dh_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
