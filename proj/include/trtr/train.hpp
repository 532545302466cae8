#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "trtr/loss.hpp"
#include "trtr/model.hpp"
#include "trtr/synth.hpp"

namespace trtr {

struct TrainingDivergence : Error {
  using Error::Error;
};

struct AdamOptions {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(ParameterList params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Var& p = params_[k].value;
      const Tensor& g = p.grad();
      Tensor& w = p.mutable_value();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[k][i] = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * g[i];
        v_[k][i] = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * g[i] * g[i];
        w[i] -= opts_.learning_rate * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + opts_.epsilon);
      }
    }
  }

  ParameterList& parameters() { return params_; }

 private:
  ParameterList params_;
  AdamOptions opts_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  ModelConfig model;
  std::size_t template_size = 127;
  std::size_t search_size = 255;
  std::size_t steps = 500;
  std::size_t batch = 4;
  AdamOptions adam;
  FocalParams focal;
  LossWeights weights;
  bool pe_mask = true;
  // Search crops are centered on the previous truth box plus a uniform shift
  // of up to this fraction of the context side, per axis.
  double jitter = 0.15;
  // Log-uniform rescaling of that reference box, up to exp(+-scale_jitter),
  // so the size head sees targets at more than one crop scale.
  double scale_jitter = 0.1;
  std::uint64_t seed = 0;
};

struct StepLog {
  std::size_t step = 0;
  double total = 0.0, classification = 0.0, offset = 0.0, size = 0.0;
};

struct TrainResult {
  TrackerNet net;
  std::vector<StepLog> log;
};

using StepCallback = std::function<void(const StepLog&)>;

/// One template/search pair drawn from a labeled sequence.
struct TrainingPair {
  std::size_t frame = 0;
  CropResult search;
  GroundTruth target;
};

inline TrainingPair sample_training_pair(const std::vector<Frame>& frames, const std::vector<BoundingBox>& truth,
                                         const TrainConfig& cfg, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const std::size_t k = pick(rng);
  BoundingBox center = truth[k == 0 ? 0 : k - 1];
  const double side = context_side(center);
  center.cx += cfg.jitter * side * unit(rng);
  center.cy += cfg.jitter * side * unit(rng);
  if (cfg.scale_jitter > 0.0) {
    const double f = std::exp(cfg.scale_jitter * unit(rng));
    center.w *= f;
    center.h *= f;
  }
  TrainingPair pair;
  pair.frame = k;
  pair.search = crop_search(frames[k], center, cfg.search_size, cfg.template_size, kOutputStride);
  const std::size_t cells = pair.search.size() / kOutputStride;
  const double extent = static_cast<double>(pair.search.size());
  pair.target = make_ground_truth(pair.search.box_to_patch(truth[k]), cells, cells, kOutputStride, extent, extent);
  return pair;
}

/// Fits the whole network (backbone, transformer, heads) with Adam on pairs
/// from one labeled sequence; the template always comes from frame 0.
inline TrainResult train_toy(const TrainConfig& cfg, const std::vector<Frame>& frames,
                             const std::vector<BoundingBox>& truth, const StepCallback& on_step = {}) {
  if (frames.empty() || frames.size() != truth.size()) throw ParameterError("train_toy needs one box per frame");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (cfg.search_size < cfg.template_size) throw ConfigError("search size must not be smaller than template size");
  TrainResult result{TrackerNet::create(cfg.model, cfg.seed), {}};
  Adam adam(result.net.parameters(), cfg.adam);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const CropResult tmpl = crop_template(frames[0], truth[0], cfg.template_size, kOutputStride);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    zero_grads(adam.parameters());
    const EncoderOutput memory = encode_template(result.net, tmpl, cfg.pe_mask);
    Var total, cls, off, sz;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const TrainingPair pair = sample_training_pair(frames, truth, cfg, rng);
      const SearchPrediction pred = predict_search(result.net, memory, pair.search, cfg.pe_mask);
      const LossBreakdown l = tracking_loss(pred.maps, pair.target, cfg.focal, cfg.weights);
      if (b == 0) {
        total = l.total, cls = l.classification, off = l.offset, sz = l.size;
      } else {
        total = total + l.total, cls = cls + l.classification, off = off + l.offset, sz = sz + l.size;
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.batch);
    total = scale(total, inv);
    StepLog entry{step, total.item(), cls.item() * inv, off.item() * inv, sz.item() * inv};
    if (!std::isfinite(entry.total)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << ": loss " << entry.total << " (classification "
          << entry.classification << ", offset " << entry.offset << ", size " << entry.size << ")";
      throw TrainingDivergence(msg.str());
    }
    backward(total);
    adam.step();
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return result;
}

inline TrainResult train_toy(const TrainConfig& cfg, const SyntheticSequence& seq, const StepCallback& on_step = {}) {
  return train_toy(cfg, seq.frames, seq.truth, on_step);
}

}  // namespace trtr
