#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trtr/autograd.hpp"
#include "trtr/checkpoint.hpp"
#include "trtr/random.hpp"

namespace trtr {

struct LayerNormWeights {
  Var gain;
  Var bias;

  static LayerNormWeights identity(std::size_t d) {
    return {parameter(Tensor({d}, 1.0)), parameter(Tensor({d}, 0.0))};
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".gain", gain});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Projections for one head: each d x d'.
struct AttentionHeadWeights {
  Var wq, wk, wv;

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".wq", wq});
    out.push_back({prefix + ".wk", wk});
    out.push_back({prefix + ".wv", wv});
  }
};

struct MultiHeadWeights {
  std::vector<AttentionHeadWeights> heads;
  Var wo;  // d x d

  std::size_t model_dim() const { return wo.shape().at(0); }

  static MultiHeadWeights random(std::size_t d, std::size_t num_heads, Rng& rng) {
    if (num_heads == 0 || d % num_heads != 0) {
      throw ConfigError("head count " + std::to_string(num_heads) + " does not divide d = " +
                        std::to_string(d));
    }
    const std::size_t dh = d / num_heads;
    MultiHeadWeights w;
    for (std::size_t h = 0; h < num_heads; ++h) {
      w.heads.push_back({parameter(glorot_tensor({d, dh}, d, dh, rng)),
                         parameter(glorot_tensor({d, dh}, d, dh, rng)),
                         parameter(glorot_tensor({d, dh}, d, dh, rng))});
    }
    w.wo = parameter(glorot_tensor({d, d}, d, d, rng));
    return w;
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    for (std::size_t h = 0; h < heads.size(); ++h)
      heads[h].collect(prefix + ".head." + std::to_string(h), out);
    out.push_back({prefix + ".wo", wo});
  }
};

/// Two 1x1 convolutions (as token-wise matmuls) with ReLU, then residual + norm.
struct FfnWeights {
  Var w1, b1;  // d x h, h
  Var w2, b2;  // h x d, d
  LayerNormWeights norm;

  static FfnWeights random(std::size_t d, std::size_t hidden, Rng& rng) {
    return {parameter(glorot_tensor({d, hidden}, d, hidden, rng)), parameter(Tensor({hidden})),
            parameter(glorot_tensor({hidden, d}, hidden, d, rng)), parameter(Tensor({d})),
            LayerNormWeights::identity(d)};
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".w1", w1});
    out.push_back({prefix + ".b1", b1});
    out.push_back({prefix + ".w2", w2});
    out.push_back({prefix + ".b2", b2});
    norm.collect(prefix + ".norm", out);
  }
};

/// Query/key streams and their positional codes. Pq/Pk rows may be zero
/// (masked positions). Values never receive positional codes.
struct AttentionInputs {
  Var xq;   // Nq x d
  Var xkv;  // Nkv x d
  Var pq;   // Nq x d
  Var pk;   // Nkv x d
};

struct QueryKeyValue {
  Var q, k, v;
};

/// Attention maps captured during a forward pass, one per head per module,
/// in evaluation order.
struct AttentionTrace {
  struct Entry {
    std::string module;
    std::size_t head;
    Tensor weights;
  };
  std::vector<Entry> entries;
};

inline void check_attention_inputs(const AttentionInputs& in) {
  kernels::require_rank(in.xq.value(), 2, "attention query input");
  kernels::require_rank(in.xkv.value(), 2, "attention key/value input");
  if (in.xq.shape()[1] != in.xkv.shape()[1])
    throw DimensionError("attention: query and key/value widths differ");
  if (in.pq.shape() != in.xq.shape())
    throw DimensionError("attention: query positional code shape " + shape_string(in.pq.shape()) +
                         " != " + shape_string(in.xq.shape()));
  if (in.pk.shape() != in.xkv.shape())
    throw DimensionError("attention: key positional code shape " + shape_string(in.pk.shape()) +
                         " != " + shape_string(in.xkv.shape()));
}

inline QueryKeyValue project_qkv(const AttentionInputs& in, const AttentionHeadWeights& w) {
  check_attention_inputs(in);
  return {matmul(in.xq + in.pq, w.wq), matmul(in.xkv + in.pk, w.wk), matmul(in.xkv, w.wv)};
}

/// Row-wise softmax of Q K^T / sqrt(d').
inline Var attention_weights(const Var& q, const Var& k) {
  kernels::require_rank(q.value(), 2, "attention_weights Q");
  kernels::require_rank(k.value(), 2, "attention_weights K");
  if (q.shape()[1] != k.shape()[1]) throw DimensionError("attention_weights: Q and K widths differ");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  return softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
}

inline Var attention_output(const Var& a, const Var& v) { return matmul(a, v); }

inline Var multi_head_attention(const AttentionInputs& in, const MultiHeadWeights& w,
                                AttentionTrace* trace = nullptr, const std::string& module = {}) {
  const std::size_t d = in.xq.shape().at(1);
  const std::size_t m = w.heads.size();
  if (m == 0 || d % m != 0)
    throw ConfigError("multi_head_attention: " + std::to_string(m) + " heads do not divide d = " +
                      std::to_string(d));
  std::vector<Var> outs;
  outs.reserve(m);
  for (std::size_t h = 0; h < m; ++h) {
    if (w.heads[h].wq.shape() != Shape{d, d / m})
      throw ConfigError("multi_head_attention: head projection must be d x d/M");
    QueryKeyValue qkv = project_qkv(in, w.heads[h]);
    Var a = attention_weights(qkv.q, qkv.k);
    if (trace) trace->entries.push_back({module, h, a.value()});
    outs.push_back(attention_output(a, qkv.v));
  }
  return matmul(m == 1 ? outs.front() : concat_cols(outs), w.wo);
}

/// layernorm(attn_out + Xq); the residual carries Xq without positional codes.
inline Var residual_norm(const Var& attn_out, const Var& xq, const LayerNormWeights& ln) {
  return layernorm(attn_out + xq, ln.gain, ln.bias);
}

inline Var ffn(const Var& x, const FfnWeights& w) {
  Var hidden = relu(add_row_bias(matmul(x, w.w1), w.b1));
  Var out = add_row_bias(matmul(hidden, w.w2), w.b2);
  return layernorm(x + out, w.norm.gain, w.norm.bias);
}

}  // namespace trtr
