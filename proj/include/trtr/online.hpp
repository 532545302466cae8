#pragma once

#include <algorithm>
#include <deque>
#include <span>
#include <vector>

#include "trtr/cg.hpp"
#include "trtr/random.hpp"
#include "trtr/tensor.hpp"

namespace trtr {

inline constexpr std::size_t kOnlineHidden = 64;
inline constexpr std::size_t kOnlineKernel = 4;
inline constexpr double kOnlineRegularization = 1e-2;
inline constexpr std::size_t kOnlineMemoryCapacity = 50;
inline constexpr double kOnlineLearningRate = 0.01;
inline constexpr double kDefaultBlendWeight = 0.6;

/// conv1x1 (C_mid -> hidden) -> relu -> conv4x4 (hidden -> 1).
struct OnlineFilter {
  Tensor w1;  // hidden x C_mid x 1 x 1
  Tensor w2;  // 1 x hidden x 4 x 4
  double regularization = kOnlineRegularization;

  static OnlineFilter initial(std::size_t mid_channels, Rng& rng, std::size_t hidden = kOnlineHidden) {
    OnlineFilter f;
    const double bound = std::sqrt(6.0 / static_cast<double>(mid_channels));
    f.w1 = uniform_tensor({hidden, mid_channels, 1, 1}, -bound, bound, rng);
    f.w2 = Tensor({1, hidden, kOnlineKernel, kOnlineKernel});
    return f;
  }

  std::size_t num_params() const { return w1.size() + w2.size(); }

  std::vector<double> flatten() const {
    std::vector<double> theta(w1.values());
    theta.insert(theta.end(), w2.data().begin(), w2.data().end());
    return theta;
  }

  void assign(std::span<const double> theta) {
    std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(w1.size()), w1.data().begin());
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(w1.size()), theta.end(), w2.data().begin());
  }
};

namespace online_detail {

// The 4x4 layer pads by 2 and keeps the first H x W outputs, so the map
// lines up with the input grid.
inline Tensor conv_same4(const Tensor& input, const Tensor& kernel) {
  Tensor full = kernels::conv2d(input, kernel, 1, 2);  // Cout x (H+1) x (W+1)
  const std::size_t c = full.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, h, w});
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(o, y, x) = full(o, y, x);
  return out;
}

inline Tensor pad_grad(const Tensor& g) {
  const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
  Tensor full({c, h + 1, w + 1});
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) full(o, y, x) = g(o, y, x);
  return full;
}

inline Tensor conv_same4_backward_input(const Tensor& grad, const Tensor& kernel, const Shape& input_shape) {
  return kernels::conv2d_backward_input(pad_grad(grad), kernel, input_shape, 1, 2);
}

inline Tensor conv_same4_backward_kernel(const Tensor& grad, const Tensor& input, const Shape& kernel_shape) {
  return kernels::conv2d_backward_kernel(pad_grad(grad), input, kernel_shape, 1, 2);
}

}  // namespace online_detail

/// Online score map [H x W] for mid-level features [C_mid x H x W].
inline Tensor online_forward(const OnlineFilter& f, const Tensor& feat) {
  if (feat.rank() != 3 || f.w1.dim(1) != feat.dim(0))
    throw DimensionError("online_forward: filter expects " + std::to_string(f.w1.dim(1)) + " channels, got " +
                         shape_string(feat.shape()));
  Tensor hidden = kernels::conv2d(feat, f.w1, 1, 0);
  for (double& v : hidden.data()) v = v < 0.0 ? 0.0 : v;
  Tensor out = online_detail::conv_same4(hidden, f.w2);
  return out.reshaped({feat.dim(1), feat.dim(2)});
}

/// Y'' = w Y' + (1 - w) Y_online.
inline Tensor blend(const Tensor& y_prime, const Tensor& y_online, double w = kDefaultBlendWeight) {
  if (y_prime.shape() != y_online.shape())
    throw DimensionError("blend: " + shape_string(y_prime.shape()) + " vs " + shape_string(y_online.shape()));
  if (!(w >= 0.0 && w <= 1.0)) throw ParameterError("blend weight must lie in [0, 1]");
  Tensor out(y_prime.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w * y_prime[i] + (1.0 - w) * y_online[i];
  return out;
}

// ---------------------------------------------------------------------------
// Sample memory
// ---------------------------------------------------------------------------

struct TrainingSample {
  Tensor feature;  // C_mid x H x W
  Tensor label;    // H x W
  double weight = 0.0;
};

struct TrainingMemory {
  std::deque<TrainingSample> samples;
  std::size_t capacity = kOnlineMemoryCapacity;
  double learning_rate = kOnlineLearningRate;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  double total_weight() const {
    double s = 0.0;
    for (const auto& smp : samples) s += smp.weight;
    return s;
  }
};

namespace online_detail {

inline void normalize_weights(TrainingMemory& m) {
  const double total = m.total_weight();
  if (total > 0.0)
    for (auto& s : m.samples) s.weight /= total;
}

}  // namespace online_detail

/// Decays existing weights by (1 - eta) and appends the new sample with the
/// previous newest weight, so weights grow geometrically toward recent
/// samples. Evicts the lowest-weight (oldest on ties) sample beyond capacity
/// and renormalizes to 1.
inline void update_memory(TrainingMemory& m, Tensor feature, Tensor label) {
  if (feature.rank() != 3 || label.rank() != 2 || feature.dim(1) != label.dim(0) || feature.dim(2) != label.dim(1))
    throw DimensionError("update_memory: feature " + shape_string(feature.shape()) + " and label " +
                         shape_string(label.shape()) + " disagree");
  if (!m.empty() && m.samples.front().feature.shape() != feature.shape())
    throw DimensionError("update_memory: feature shape differs from stored samples");
  const double newest = m.empty() ? 1.0 : m.samples.back().weight;
  for (auto& s : m.samples) s.weight *= (1.0 - m.learning_rate);
  m.samples.push_back({std::move(feature), std::move(label), newest});
  while (m.samples.size() > m.capacity) {
    auto lowest = std::min_element(m.samples.begin(), m.samples.end(),
                                   [](const auto& a, const auto& b) { return a.weight < b.weight; });
    m.samples.erase(lowest);
  }
  online_detail::normalize_weights(m);
}

/// Replaces the memory content with equally weighted samples.
inline void seed_memory(TrainingMemory& m, std::vector<std::pair<Tensor, Tensor>> samples) {
  m.samples.clear();
  for (auto& [f, l] : samples) m.samples.push_back({std::move(f), std::move(l), 1.0});
  while (m.samples.size() > m.capacity) m.samples.pop_front();
  online_detail::normalize_weights(m);
}

// ---------------------------------------------------------------------------
// Least-squares problem for the filter, linearized with a frozen ReLU mask.
// ---------------------------------------------------------------------------

class OnlineFilterProblem {
 public:
  OnlineFilterProblem(const OnlineFilter& shape_of, const TrainingMemory& memory)
      : memory_(memory),
        w1_shape_(shape_of.w1.shape()),
        w2_shape_(shape_of.w2.shape()),
        n1_(shape_of.w1.size()),
        regularization_(shape_of.regularization) {}

  std::size_t num_params() const { return n1_ + shape_size(w2_shape_); }

  double objective(std::span<const double> theta) const {
    const OnlineFilter f = unpack(theta);
    double e = 0.0;
    for (const auto& s : memory_.samples) {
      const Tensor out = online_forward(f, s.feature);
      double sq = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) sq += (out[i] - s.label[i]) * (out[i] - s.label[i]);
      e += s.weight * sq;
    }
    return e + regularization_ * dot(theta, theta);
  }

  void linearize(std::span<const double> theta) {
    theta_.assign(theta.begin(), theta.end());
    filter_ = unpack(theta);
    cache_.clear();
    for (const auto& s : memory_.samples) {
      Cache c;
      Tensor pre = kernels::conv2d(s.feature, filter_.w1, 1, 0);
      c.mask = Tensor(pre.shape());
      c.act = Tensor(pre.shape());
      for (std::size_t i = 0; i < pre.size(); ++i) {
        const bool on = pre[i] > 0.0;
        c.mask[i] = on ? 1.0 : 0.0;
        c.act[i] = on ? pre[i] : 0.0;
      }
      Tensor out = online_detail::conv_same4(c.act, filter_.w2);
      c.residual = Tensor(out.shape());
      for (std::size_t i = 0; i < out.size(); ++i) c.residual[i] = out[i] - s.label[i];
      cache_.push_back(std::move(c));
    }
  }

  std::vector<double> gradient() const {
    std::vector<double> g(num_params(), 0.0);
    for (std::size_t k = 0; k < cache_.size(); ++k) accumulate_jt(k, cache_[k].residual, memory_.samples[k].weight, g);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += regularization_ * theta_[i];
    return g;
  }

  std::vector<double> apply_normal(std::span<const double> v) const {
    std::vector<double> out(num_params(), 0.0);
    const Tensor v1(w1_shape_, std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n1_)));
    const Tensor v2(w2_shape_, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(n1_), v.end()));
    for (std::size_t k = 0; k < cache_.size(); ++k) {
      const auto& c = cache_[k];
      Tensor dh = kernels::conv2d(memory_.samples[k].feature, v1, 1, 0);
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= c.mask[i];
      Tensor jv = online_detail::conv_same4(dh, filter_.w2);
      const Tensor jv2 = online_detail::conv_same4(c.act, v2);
      for (std::size_t i = 0; i < jv.size(); ++i) jv[i] += jv2[i];
      accumulate_jt(k, jv, memory_.samples[k].weight, out);
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += regularization_ * v[i];
    return out;
  }

  OnlineFilter unpack(std::span<const double> theta) const {
    OnlineFilter f;
    f.w1 = Tensor(w1_shape_);
    f.w2 = Tensor(w2_shape_);
    f.regularization = regularization_;
    f.assign(theta);
    return f;
  }

 private:
  struct Cache {
    Tensor mask, act, residual;
  };

  // out += weight * J_k^T u
  void accumulate_jt(std::size_t k, const Tensor& u, double weight, std::vector<double>& out) const {
    const auto& c = cache_[k];
    const Tensor g2 = online_detail::conv_same4_backward_kernel(u, c.act, w2_shape_);
    Tensor ga = online_detail::conv_same4_backward_input(u, filter_.w2, c.act.shape());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= c.mask[i];
    const Tensor g1 = kernels::conv2d_backward_kernel(ga, memory_.samples[k].feature, w1_shape_, 1, 0);
    for (std::size_t i = 0; i < n1_; ++i) out[i] += weight * g1[i];
    for (std::size_t i = 0; i < g2.size(); ++i) out[n1_ + i] += weight * g2[i];
  }

  const TrainingMemory& memory_;
  Shape w1_shape_, w2_shape_;
  std::size_t n1_;
  double regularization_;
  std::vector<double> theta_;
  OnlineFilter filter_;
  std::vector<Cache> cache_;
};

struct OnlineSolveResult {
  OnlineFilter filter;
  GaussNewtonReport report;
};

/// Fits the filter to the memory by Gauss-Newton with CG inner solves. On a
/// degraded update the input filter is returned unchanged.
inline OnlineSolveResult solve_cg(const OnlineFilter& filter, const TrainingMemory& memory,
                                  const GaussNewtonOptions& opts) {
  if (memory.empty()) throw ParameterError("solve_cg: empty training memory");
  if (opts.outer_steps == 0 || opts.cg_iterations == 0) throw ParameterError("solve_cg: iteration counts must be >= 1");
  OnlineFilterProblem problem(filter, memory);
  std::vector<double> theta = filter.flatten();
  GaussNewtonReport report = gauss_newton(problem, theta, opts);
  if (report.degraded) return {filter, std::move(report)};
  OnlineFilter out = filter;
  out.assign(theta);
  return {std::move(out), std::move(report)};
}

}  // namespace trtr
