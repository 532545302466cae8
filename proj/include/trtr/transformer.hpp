#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "trtr/attention.hpp"

namespace trtr {

/// Boolean map over a feature grid; true marks a padded (out-of-image) cell.
struct GridMask {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> padded;

  GridMask() = default;
  GridMask(std::size_t r, std::size_t c, bool value = false)
      : rows(r), cols(c), padded(r * c, value ? 1 : 0) {}

  bool at(std::size_t r, std::size_t c) const { return padded[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { padded[r * cols + c] = v ? 1 : 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : padded) n += v;
    return n;
  }
};

inline constexpr double kPositionalTemperature = 10000.0;

/// 2-D sinusoidal code, [h*w x d]. The first d/2 channels encode the row,
/// the rest the column; within each half, channel 2k is sin and 2k+1 is cos
/// at frequency temperature^(-2k/(d/2)). Rows flagged in `pad_mask` are zero.
inline Tensor build_positional_encoding(std::size_t height, std::size_t width, std::size_t d,
                                        const GridMask& pad_mask) {
  if (d == 0 || d % 4 != 0)
    throw ConfigError("positional encoding needs d divisible by 4, got " + std::to_string(d));
  const bool has_mask = !pad_mask.padded.empty();
  if (has_mask && (pad_mask.rows != height || pad_mask.cols != width))
    throw DimensionError("positional encoding: mask extent does not match grid");
  const std::size_t half = d / 2;
  std::vector<double> inv_freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(half);
    inv_freq[i] = 1.0 / std::pow(kPositionalTemperature, expo);
  }
  Tensor pe({height * width, d});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (has_mask && pad_mask.at(y, x)) continue;
      double* row = pe.data().data() + (y * width + x) * d;
      for (std::size_t i = 0; i < half; ++i) {
        const double ay = static_cast<double>(y) * inv_freq[i];
        const double ax = static_cast<double>(x) * inv_freq[i];
        row[i] = (i % 2 == 0) ? std::sin(ay) : std::cos(ay);
        row[half + i] = (i % 2 == 0) ? std::sin(ax) : std::cos(ax);
      }
    }
  }
  return pe;
}

struct EncoderLayerWeights {
  MultiHeadWeights self_attn;
  LayerNormWeights norm;
  FfnWeights ffn;

  void collect(const std::string& prefix, ParameterList& out) const {
    self_attn.collect(prefix + ".self_attn", out);
    norm.collect(prefix + ".norm", out);
    ffn.collect(prefix + ".ffn", out);
  }
};

struct DecoderLayerWeights {
  MultiHeadWeights self_attn;
  LayerNormWeights norm1;
  MultiHeadWeights cross_attn;
  LayerNormWeights norm2;
  FfnWeights ffn;

  void collect(const std::string& prefix, ParameterList& out) const {
    self_attn.collect(prefix + ".self_attn", out);
    norm1.collect(prefix + ".norm1", out);
    cross_attn.collect(prefix + ".cross_attn", out);
    norm2.collect(prefix + ".norm2", out);
    ffn.collect(prefix + ".ffn", out);
  }
};

struct TransformerConfig {
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 8;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
};

struct TransformerWeights {
  std::vector<EncoderLayerWeights> encoder;
  std::vector<DecoderLayerWeights> decoder;

  static TransformerWeights random(const TransformerConfig& cfg, Rng& rng) {
    if (cfg.encoder_layers == 0 || cfg.decoder_layers == 0)
      throw ConfigError("transformer needs at least one encoder and one decoder layer");
    const std::size_t hidden = cfg.ffn_multiplier * cfg.d;
    TransformerWeights w;
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
      w.encoder.push_back({MultiHeadWeights::random(cfg.d, cfg.heads, rng), LayerNormWeights::identity(cfg.d),
                           FfnWeights::random(cfg.d, hidden, rng)});
    }
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
      w.decoder.push_back({MultiHeadWeights::random(cfg.d, cfg.heads, rng), LayerNormWeights::identity(cfg.d),
                           MultiHeadWeights::random(cfg.d, cfg.heads, rng), LayerNormWeights::identity(cfg.d),
                           FfnWeights::random(cfg.d, hidden, rng)});
    }
    return w;
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect(prefix + "encoder." + std::to_string(i), out);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect(prefix + "decoder." + std::to_string(i), out);
  }
};

/// Template features, [d x h x w], plus the padded-cell map.
struct EncoderInput {
  Var z0;
  GridMask pad_mask;
  bool mask_padding_pe = true;
};

/// Search features, [d x H x W], plus the padded-cell map.
struct DecoderInput {
  Var x0;
  GridMask pad_mask;
  bool mask_padding_pe = true;
};

inline Tensor positional_encoding_for(const Var& map, const GridMask& mask, bool mask_padding) {
  kernels::require_rank(map.value(), 3, "feature map");
  const std::size_t d = map.shape()[0], h = map.shape()[1], w = map.shape()[2];
  if (!mask.padded.empty() && (mask.rows != h || mask.cols != w))
    throw DimensionError("pad mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                         " does not match feature grid " + std::to_string(h) + "x" + std::to_string(w));
  return build_positional_encoding(h, w, d, mask_padding ? mask : GridMask{});
}

inline Var encoder_layer(const Var& seq, const Var& pe, const EncoderLayerWeights& w,
                         AttentionTrace* trace = nullptr, const std::string& name = "encoder") {
  Var attn = multi_head_attention({seq, seq, pe, pe}, w.self_attn, trace, name + ".self_attn");
  Var x = residual_norm(attn, seq, w.norm);
  return ffn(x, w.ffn);
}

inline Var decoder_layer(const Var& seq, const Var& pe_x, const Var& memory, const Var& pe_z,
                         const DecoderLayerWeights& w, AttentionTrace* trace = nullptr,
                         const std::string& name = "decoder") {
  Var self = multi_head_attention({seq, seq, pe_x, pe_x}, w.self_attn, trace, name + ".self_attn");
  Var x = residual_norm(self, seq, w.norm1);
  Var cross = multi_head_attention({x, memory, pe_x, pe_z}, w.cross_attn, trace, name + ".cross_attn");
  x = residual_norm(cross, x, w.norm2);
  return ffn(x, w.ffn);
}

struct EncoderOutput {
  Var memory;  // hw x d
  Var pe;      // hw x d, the template positional code used for cross-attention keys
};

/// Runs the first `layers` encoder layers (all when 0) over the flattened template.
inline EncoderOutput encode(const EncoderInput& in, const TransformerWeights& w, std::size_t layers = 0,
                            AttentionTrace* trace = nullptr) {
  if (layers == 0) layers = w.encoder.size();
  if (layers == 0 || layers > w.encoder.size())
    throw ConfigError("encode: requested " + std::to_string(layers) + " layers, weights hold " +
                      std::to_string(w.encoder.size()));
  Var pe = constant(positional_encoding_for(in.z0, in.pad_mask, in.mask_padding_pe));
  Var seq = map_to_sequence(in.z0);
  for (std::size_t i = 0; i < layers; ++i)
    seq = encoder_layer(seq, pe, w.encoder[i], trace, "encoder." + std::to_string(i));
  return {seq, pe};
}

/// Runs the decoder stack over the flattened search features; every layer
/// cross-attends to the same encoder memory. Returns [d x H x W].
inline Var decode(const DecoderInput& in, const EncoderOutput& enc, const TransformerWeights& w,
                  std::size_t layers = 0, AttentionTrace* trace = nullptr) {
  if (layers == 0) layers = w.decoder.size();
  if (layers == 0 || layers > w.decoder.size())
    throw ConfigError("decode: requested " + std::to_string(layers) + " layers, weights hold " +
                      std::to_string(w.decoder.size()));
  if (enc.memory.shape().at(1) != in.x0.shape().at(0))
    throw DimensionError("decode: memory width " + std::to_string(enc.memory.shape()[1]) +
                         " != search feature channels " + std::to_string(in.x0.shape()[0]));
  Var pe = constant(positional_encoding_for(in.x0, in.pad_mask, in.mask_padding_pe));
  Var seq = map_to_sequence(in.x0);
  for (std::size_t i = 0; i < layers; ++i)
    seq = decoder_layer(seq, pe, enc.memory, enc.pe, w.decoder[i], trace, "decoder." + std::to_string(i));
  return sequence_to_map(seq, in.x0.shape()[1], in.x0.shape()[2]);
}

inline Var run_transformer(const EncoderInput& enc_in, const DecoderInput& dec_in, const TransformerWeights& w,
                           std::size_t n_enc = 1, std::size_t n_dec = 1, AttentionTrace* trace = nullptr) {
  if (n_enc == 0 || n_dec == 0) throw ConfigError("run_transformer: layer counts must be at least 1");
  EncoderOutput enc = encode(enc_in, w, n_enc, trace);
  return decode(dec_in, enc, w, n_dec, trace);
}

}  // namespace trtr
