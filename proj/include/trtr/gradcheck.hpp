#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trtr/loss.hpp"
#include "trtr/model.hpp"

namespace trtr {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;  // used where both gradients are below small_magnitude
  double small_magnitude = 1e-3;
};

struct GradCheckReport {
  std::string name;
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;  // over components judged by relative error
  double max_abs_err = 0.0;  // over components judged by absolute error
  std::string worst;         // "param[index]: analytic vs numeric"
  double seconds = 0.0;

  bool passed() const { return checked > 0 && failures == 0; }
};

/// Compares reverse-mode gradients of a scalar loss with central differences
/// for every entry of every listed input.
inline GradCheckReport check_gradients(const std::string& name, const std::function<Var()>& loss_fn,
                                       ParameterList inputs, const GradCheckOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport rep;
  rep.name = name;
  zero_grads(inputs);
  backward(loss_fn());
  std::vector<Tensor> analytic;
  for (const auto& p : inputs) analytic.push_back(p.value.grad());

  double worst_score = -1.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& value = inputs[k].value.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      double plus, minus;
      {
        NoGradGuard guard;
        value[i] = saved + opts.step;
        plus = loss_fn().item();
        value[i] = saved - opts.step;
        minus = loss_fn().item();
      }
      value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double diff = std::abs(a - numeric);
      const double mag = std::max(std::abs(a), std::abs(numeric));
      bool ok;
      double score;
      if (mag < opts.small_magnitude) {
        ok = diff < opts.abs_tol;
        rep.max_abs_err = std::max(rep.max_abs_err, diff);
        score = diff / opts.abs_tol;
      } else {
        const double rel = diff / mag;
        ok = rel < opts.rel_tol;
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        score = rel / opts.rel_tol;
      }
      ++rep.checked;
      if (!ok) ++rep.failures;
      if (score > worst_score) {
        worst_score = score;
        rep.worst = inputs[k].name + "[" + std::to_string(i) + "]: analytic " + std::to_string(a) + " vs numeric " +
                    std::to_string(numeric);
      }
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Standard suite: every differentiable operation on small random instances.
// ---------------------------------------------------------------------------

struct GradCheckCase {
  std::string name;
  std::function<Var()> loss;
  ParameterList inputs;
};

namespace gradcheck_detail {

inline Var random_input(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return parameter(uniform_tensor(std::move(shape), lo, hi, rng));
}

// Reduces any output to a scalar through a fixed random projection so every
// output component contributes a distinct weight.
inline std::function<Var(const Var&)> projector(Rng& rng) {
  auto seed = rng();
  return [seed](const Var& out) {
    Rng local(seed);
    return sum(mul(out, constant(uniform_tensor(out.shape(), -1.0, 1.0, local))));
  };
}

inline void randomize(ParameterList& params, Rng& rng, double spread = 0.5) {
  std::uniform_real_distribution<double> dist(-spread, spread);
  for (auto& p : params)
    for (double& v : p.value.mutable_value().data()) v += dist(rng);
}

inline void add_instances(std::vector<GradCheckCase>& out, const std::string& name, std::size_t instances,
                          std::uint64_t seed, const std::function<GradCheckCase(Rng&)>& make) {
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(seed * 1000003ULL + i * 7919ULL + std::hash<std::string>{}(name));
    GradCheckCase c = make(rng);
    c.name = name + "#" + std::to_string(i);
    out.push_back(std::move(c));
  }
}

// Target at a random interior cell; the label is exactly 1 there.
inline GroundTruth random_target(std::size_t rows, std::size_t cols, std::size_t stride, Rng& rng) {
  std::uniform_real_distribution<double> pos(0.5, static_cast<double>(std::min(rows, cols) * stride) - 0.5);
  std::uniform_real_distribution<double> ext(0.2, 0.8);
  const double s = static_cast<double>(stride);
  BoundingBox b{pos(rng), pos(rng), ext(rng) * static_cast<double>(cols) * s, ext(rng) * static_cast<double>(rows) * s};
  return make_ground_truth(b, rows, cols, stride, static_cast<double>(cols) * s, static_cast<double>(rows) * s);
}

}  // namespace gradcheck_detail

struct StackShape {
  std::size_t h = 2, w = 2;          // template grid
  std::size_t search_h = 4, search_w = 4;
  std::size_t d = 8, heads = 2;
  std::size_t encoder_layers = 1, decoder_layers = 1;
};

/// Transformer + heads + joint loss, differentiated with respect to the
/// template/search features and every learnable weight.
inline GradCheckCase full_stack_case(const StackShape& s, Rng& rng) {
  using namespace gradcheck_detail;
  TransformerWeights tw =
      TransformerWeights::random({s.d, s.heads, 2, s.encoder_layers, s.decoder_layers}, rng);
  HeadWeights hw = HeadWeights::random(s.d, rng);
  Var z0 = random_input({s.d, s.h, s.w}, rng);
  Var x0 = random_input({s.d, s.search_h, s.search_w}, rng);
  GridMask zmask(s.h, s.w), xmask(s.search_h, s.search_w);
  xmask.set(s.search_h - 1, s.search_w - 1, true);
  GroundTruth gt = random_target(s.search_h, s.search_w, kOutputStride, rng);
  ParameterList inputs{{"z0", z0}, {"x0", x0}};
  ParameterList weights;
  tw.collect("", weights);
  hw.collect("", weights);
  randomize(weights, rng, 0.2);
  inputs.insert(inputs.end(), weights.begin(), weights.end());
  GradCheckCase c;
  c.inputs = std::move(inputs);
  c.loss = [=] {
    Var dec = run_transformer({z0, zmask, true}, {x0, xmask, true}, tw, s.encoder_layers, s.decoder_layers);
    return tracking_loss(heads_forward(dec, hw, kOutputStride), gt).total;
  };
  return c;
}

inline std::vector<GradCheckCase> standard_gradcheck_suite(std::uint64_t seed = 1, std::size_t instances = 3) {
  using namespace gradcheck_detail;
  std::vector<GradCheckCase> cases;

  add_instances(cases, "matmul", instances, seed, [](Rng& rng) {
    Var a = random_input({3, 4}, rng), b = random_input({4, 2}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(matmul(a, b)); }, {{"a", a}, {"b", b}}};
  });
  add_instances(cases, "transpose", instances, seed, [](Rng& rng) {
    Var a = random_input({3, 5}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(transpose(a)); }, {{"a", a}}};
  });
  add_instances(cases, "elementwise", instances, seed, [](Rng& rng) {
    Var a = random_input({2, 3}, rng), b = random_input({2, 3}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(sub(mul(a, b), scale(add(a, b), 0.3))); }, {{"a", a}, {"b", b}}};
  });
  add_instances(cases, "bias", instances, seed, [](Rng& rng) {
    Var x = random_input({3, 4}, rng), b = random_input({4}, rng);
    Var m = random_input({2, 3, 3}, rng), c = random_input({2}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"",
                         [=] { return proj(add_row_bias(x, b)) + proj(reshape(add_channel_bias(m, c), {3, 6})); },
                         {{"x", x}, {"b", b}, {"m", m}, {"c", c}}};
  });
  add_instances(cases, "relu", instances, seed, [](Rng& rng) {
    Var a = random_input({4, 4}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(relu(a)); }, {{"a", a}}};
  });
  add_instances(cases, "sigmoid", instances, seed, [](Rng& rng) {
    Var a = random_input({3, 3}, rng, -3.0, 3.0);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(sigmoid(a)); }, {{"a", a}}};
  });
  add_instances(cases, "softmax_rows", instances, seed, [](Rng& rng) {
    Var a = random_input({3, 5}, rng, -2.0, 2.0);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(softmax_rows(a)); }, {{"a", a}}};
  });
  add_instances(cases, "layernorm", instances, seed, [](Rng& rng) {
    Var x = random_input({3, 6}, rng), g = random_input({6}, rng, 0.5, 1.5), b = random_input({6}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(layernorm(x, g, b)); }, {{"x", x}, {"gain", g}, {"bias", b}}};
  });
  add_instances(cases, "conv2d", instances, seed, [](Rng& rng) {
    Var x = random_input({2, 6, 6}, rng), k1 = random_input({3, 2, 3, 3}, rng), k2 = random_input({2, 3, 4, 4}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(conv2d(conv2d(x, k1, 1, 1), k2, 2, 1)); },
                         {{"x", x}, {"k1", k1}, {"k2", k2}}};
  });
  add_instances(cases, "concat_reshape", instances, seed, [](Rng& rng) {
    Var a = random_input({3, 2}, rng), b = random_input({3, 4}, rng), m = random_input({3, 2, 2}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"",
                         [=] {
                           Var seq = map_to_sequence(m);
                           return proj(concat_cols({a, b})) + proj(sequence_to_map(seq, 2, 2)) + proj(seq);
                         },
                         {{"a", a}, {"b", b}, {"m", m}}};
  });
  add_instances(cases, "attention_weights", instances, seed, [](Rng& rng) {
    Var q = random_input({3, 4}, rng), k = random_input({5, 4}, rng);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(attention_weights(q, k)); }, {{"q", q}, {"k", k}}};
  });
  add_instances(cases, "multi_head_attention", instances, seed, [](Rng& rng) {
    MultiHeadWeights w = MultiHeadWeights::random(8, 2, rng);
    Var xq = random_input({3, 8}, rng), xkv = random_input({5, 8}, rng);
    Var pq = constant(uniform_tensor({3, 8}, -1, 1, rng)), pk = constant(uniform_tensor({5, 8}, -1, 1, rng));
    auto proj = projector(rng);
    ParameterList in{{"xq", xq}, {"xkv", xkv}};
    w.collect("mha", in);
    return GradCheckCase{"", [=] { return proj(multi_head_attention({xq, xkv, pq, pk}, w)); }, in};
  });
  add_instances(cases, "residual_norm", instances, seed, [](Rng& rng) {
    LayerNormWeights ln = LayerNormWeights::identity(6);
    Var a = random_input({4, 6}, rng), x = random_input({4, 6}, rng);
    ParameterList in{{"attn", a}, {"xq", x}};
    ln.collect("ln", in);
    randomize(in, rng, 0.3);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(residual_norm(a, x, ln)); }, in};
  });
  add_instances(cases, "ffn", instances, seed, [](Rng& rng) {
    FfnWeights w = FfnWeights::random(4, 16, rng);
    Var x = random_input({3, 4}, rng);
    ParameterList in{{"x", x}};
    w.collect("ffn", in);
    randomize(in, rng, 0.2);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(ffn(x, w)); }, in};
  });
  add_instances(cases, "encoder_layer", instances, seed, [](Rng& rng) {
    TransformerWeights tw = TransformerWeights::random({8, 2, 2, 1, 1}, rng);
    Var seq = random_input({4, 8}, rng);
    Var pe = constant(build_positional_encoding(2, 2, 8, {}));
    ParameterList in{{"seq", seq}};
    tw.encoder[0].collect("enc", in);
    randomize(in, rng, 0.2);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(encoder_layer(seq, pe, tw.encoder[0])); }, in};
  });
  add_instances(cases, "decoder_layer", instances, seed, [](Rng& rng) {
    TransformerWeights tw = TransformerWeights::random({8, 2, 2, 1, 1}, rng);
    Var seq = random_input({6, 8}, rng), mem = random_input({4, 8}, rng);
    Var pex = constant(build_positional_encoding(2, 3, 8, {}));
    Var pez = constant(build_positional_encoding(2, 2, 8, {}));
    ParameterList in{{"seq", seq}, {"memory", mem}};
    tw.decoder[0].collect("dec", in);
    randomize(in, rng, 0.2);
    auto proj = projector(rng);
    return GradCheckCase{"", [=] { return proj(decoder_layer(seq, pex, mem, pez, tw.decoder[0])); }, in};
  });
  add_instances(cases, "heads", instances, seed, [](Rng& rng) {
    HeadWeights hw = HeadWeights::random(6, rng);
    Var feat = random_input({6, 3, 3}, rng);
    ParameterList in{{"features", feat}};
    hw.collect("", in);
    randomize(in, rng, 0.2);
    auto p1 = projector(rng), p2 = projector(rng), p3 = projector(rng);
    return GradCheckCase{"",
                         [=] {
                           HeadMaps m = heads_forward(feat, hw, 8);
                           return p1(m.y) + p2(m.offset) + p3(m.size);
                         },
                         in};
  });
  add_instances(cases, "focal_loss", instances, seed, [](Rng& rng) {
    Var y = random_input({4, 4}, rng, 0.05, 0.95);
    std::uniform_int_distribution<std::size_t> cell(0, 3);
    Tensor label = gaussian_label({cell(rng), cell(rng)}, 1.0, 4, 4);
    return GradCheckCase{"", [=] { return focal_loss(y, label); }, {{"y", y}}};
  });
  add_instances(cases, "offset_size_loss", instances, seed, [](Rng& rng) {
    Var o = random_input({4, 4, 2}, rng, 0.0, 1.0), s = random_input({4, 4, 2}, rng, 0.0, 1.0);
    const GroundTruth gt = random_target(4, 4, 8, rng);
    return GradCheckCase{"",
                         [=] {
                           return joint_loss(constant(Tensor::scalar(0.0)), offset_loss(o, gt.center_x, gt.center_y, 8),
                                             size_loss(s, {gt.norm_w, gt.norm_h}, gt.cell), {0.7, 1.3});
                         },
                         {{"offset", o}, {"size", s}}};
  });
  add_instances(cases, "tracking_loss", instances, seed, [](Rng& rng) {
    Var y = random_input({4, 4}, rng, 0.05, 0.95);
    Var o = random_input({4, 4, 2}, rng, 0.0, 1.0), s = random_input({4, 4, 2}, rng, 0.0, 1.0);
    const GroundTruth gt = random_target(4, 4, 8, rng);
    return GradCheckCase{"", [=] { return tracking_loss({y, o, s, 8}, gt).total; },
                         {{"y", y}, {"offset", o}, {"size", s}}};
  });
  add_instances(cases, "backbone", instances, seed, [](Rng& rng) {
    BackboneWeights bw = BackboneWeights::random(4, 4, rng);
    Var patch = random_input({3, 16, 16}, rng, 0.0, 1.0);
    ParameterList in{{"patch", patch}};
    bw.collect("", in);
    randomize(in, rng, 0.1);
    auto p1 = projector(rng), p2 = projector(rng);
    return GradCheckCase{"",
                         [=] {
                           BackboneOutput o = backbone_forward(patch, bw);
                           return p1(o.mid) + p2(o.out);
                         },
                         in};
  });
  add_instances(cases, "full_stack", instances, seed, [](Rng& rng) { return full_stack_case({}, rng); });
  add_instances(cases, "full_stack_2x2", instances, seed, [](Rng& rng) {
    StackShape s;
    s.encoder_layers = s.decoder_layers = 2;
    return full_stack_case(s, rng);
  });
  return cases;
}

inline std::vector<GradCheckReport> run_gradcheck_suite(const std::vector<GradCheckCase>& cases,
                                                        const GradCheckOptions& opts = {}) {
  std::vector<GradCheckReport> out;
  for (const auto& c : cases) out.push_back(check_gradients(c.name, c.loss, c.inputs, opts));
  return out;
}

}  // namespace trtr
