#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "trtr/checkpoint.hpp"
#include "trtr/crop.hpp"
#include "trtr/localize.hpp"
#include "trtr/transformer.hpp"

namespace trtr {

inline constexpr std::size_t kOutputStride = 8;

// ---------------------------------------------------------------------------
// Backbone: four conv stages with strides 2, 2, 2, 1. The strided stages use
// 4x4 kernels (padding 1) so even extents halve exactly; stage four is a 3x3.
// Stage three (stride 8, C_mid channels) is the mid-level tap; stage four
// reduces to d channels.
// ---------------------------------------------------------------------------

struct ConvLayer {
  Var kernel;  // Cout x Cin x k x k
  Var bias;    // Cout
  std::size_t stride = 1;
  std::size_t padding = 1;

  static ConvLayer random(std::size_t in, std::size_t out, std::size_t kernel_size, std::size_t stride, Rng& rng) {
    const std::size_t fan_in = in * kernel_size * kernel_size;
    // He-uniform
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return {parameter(uniform_tensor({out, in, kernel_size, kernel_size}, -bound, bound, rng)),
            parameter(Tensor({out})), stride, 1};
  }

  Var forward(const Var& x) const { return add_channel_bias(conv2d(x, kernel, stride, padding), bias); }
};

struct BackboneWeights {
  std::array<ConvLayer, 4> stages;

  static BackboneWeights random(std::size_t mid_channels, std::size_t d, Rng& rng) {
    return {{ConvLayer::random(3, 8, 4, 2, rng), ConvLayer::random(8, 16, 4, 2, rng),
             ConvLayer::random(16, mid_channels, 4, 2, rng), ConvLayer::random(mid_channels, d, 3, 1, rng)}};
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      out.push_back({prefix + "backbone." + std::to_string(i) + ".kernel", stages[i].kernel});
      out.push_back({prefix + "backbone." + std::to_string(i) + ".bias", stages[i].bias});
    }
  }
};

struct BackboneOutput {
  Var mid;  // C_mid x T/8 x T/8
  Var out;  // d x T/8 x T/8
};

inline BackboneOutput backbone_forward(const Var& patch, const BackboneWeights& w) {
  kernels::require_rank(patch.value(), 3, "backbone input");
  const std::size_t h = patch.shape()[1], wd = patch.shape()[2];
  if (h % kOutputStride != 0 || wd % kOutputStride != 0)
    throw ConfigError("backbone input extent " + std::to_string(h) + "x" + std::to_string(wd) +
                      " is not divisible by the output stride");
  Var x = relu(w.stages[0].forward(patch));
  x = relu(w.stages[1].forward(x));
  Var mid = relu(w.stages[2].forward(x));
  return {mid, w.stages[3].forward(mid)};
}

// ---------------------------------------------------------------------------
// Whole network
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 8;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t mid_channels = 32;

  TransformerConfig transformer() const { return {d, heads, ffn_multiplier, encoder_layers, decoder_layers}; }

  /// d = 256, M = 8, FFN 8d, 1 + 1 layers.
  static ModelConfig full() { return {256, 8, 8, 1, 1, 1024}; }
};

struct TrackerNet {
  ModelConfig config;
  BackboneWeights backbone;
  TransformerWeights transformer;
  HeadWeights heads;

  static TrackerNet create(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.d == 0 || cfg.d % 4 != 0) throw ConfigError("d must be a positive multiple of 4");
    if (cfg.heads == 0 || cfg.d % cfg.heads != 0) throw ConfigError("head count must divide d");
    if (cfg.mid_channels == 0) throw ConfigError("mid channel count must be positive");
    Rng rng(seed);
    TrackerNet net;
    net.config = cfg;
    net.backbone = BackboneWeights::random(cfg.mid_channels, cfg.d, rng);
    net.transformer = TransformerWeights::random(cfg.transformer(), rng);
    net.heads = HeadWeights::random(cfg.d, rng);
    return net;
  }

  ParameterList parameters() const {
    ParameterList out;
    backbone.collect("", out);
    transformer.collect("", out);
    heads.collect("", out);
    return out;
  }

  /// Deep copy with independent parameter storage.
  TrackerNet clone() const {
    TrackerNet copy = create(config, 0);
    auto dst = copy.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].value.mutable_value() = src[i].value.value();
    return copy;
  }
};

/// Recovers the architecture from archived parameter names and shapes.
inline ModelConfig infer_config(const Checkpoint& ckpt) {
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = ckpt.find(name);
    if (it == ckpt.end()) throw InputError("checkpoint lacks " + name);
    return it->second;
  };
  ModelConfig cfg;
  cfg.mid_channels = get("backbone.2.kernel").dim(0);
  cfg.d = get("backbone.3.kernel").dim(0);
  cfg.heads = 0;
  while (ckpt.count("encoder.0.self_attn.head." + std::to_string(cfg.heads) + ".wq")) ++cfg.heads;
  cfg.ffn_multiplier = get("encoder.0.ffn.w1").dim(1) / cfg.d;
  cfg.encoder_layers = 0;
  while (ckpt.count("encoder." + std::to_string(cfg.encoder_layers) + ".ffn.w1")) ++cfg.encoder_layers;
  cfg.decoder_layers = 0;
  while (ckpt.count("decoder." + std::to_string(cfg.decoder_layers) + ".ffn.w1")) ++cfg.decoder_layers;
  return cfg;
}

inline TrackerNet load_model(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  TrackerNet net = TrackerNet::create(infer_config(ckpt), 0);
  auto params = net.parameters();
  assign_checkpoint(params, ckpt);
  return net;
}

// ---------------------------------------------------------------------------
// Forward helpers shared by training and tracking
// ---------------------------------------------------------------------------

inline EncoderOutput encode_template(const TrackerNet& net, const CropResult& crop, bool mask_padding_pe = true,
                                     AttentionTrace* trace = nullptr) {
  BackboneOutput feats = backbone_forward(constant(crop.patch), net.backbone);
  EncoderInput in{feats.out, cell_mask(crop, kOutputStride), mask_padding_pe};
  return encode(in, net.transformer, 0, trace);
}

struct SearchPrediction {
  HeadMaps maps;
  Var mid;  // backbone mid-level features of the search crop
};

inline SearchPrediction predict_search(const TrackerNet& net, const EncoderOutput& memory, const CropResult& crop,
                                       bool mask_padding_pe = true, AttentionTrace* trace = nullptr) {
  BackboneOutput feats = backbone_forward(constant(crop.patch), net.backbone);
  DecoderInput in{feats.out, cell_mask(crop, kOutputStride), mask_padding_pe};
  Var decoded = decode(in, memory, net.transformer, 0, trace);
  return {heads_forward(decoded, net.heads, kOutputStride), feats.mid};
}

}  // namespace trtr
