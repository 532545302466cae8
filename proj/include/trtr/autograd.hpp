#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "trtr/tensor.hpp"

namespace trtr {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // lazily allocated, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor&)> backward;

  void accumulate(const Tensor& g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    auto dst = grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a value in the computation graph. Copies share the node, so a
/// parameter held in several places accumulates into one gradient buffer.
class Var {
 public:
  Var() = default;

  explicit Var(Tensor value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const {
    if (node_->value.size() != 1) throw ContractError("item() on non-scalar " + shape_string(shape()));
    return node_->value[0];
  }

  /// Gradient of the last backward() pass; zeros if nothing reached this node.
  const Tensor& grad() const {
    if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape());
    return node_->grad;
  }

  void zero_grad() { node_->grad = Tensor(node_->value.shape()); }

  void accumulate_grad(const Tensor& g) const {
    if (node_->requires_grad) node_->accumulate(g);
  }

  bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

  /// Records an operation result. `backward` receives d(loss)/d(result) and
  /// pushes contributions into the captured inputs via accumulate_grad().
  static Var record(Tensor value, const std::vector<Var>& inputs,
                    std::function<void(const Tensor&)> backward) {
    Var out(std::move(value), false);
    if (!detail::grad_mode_flag()) return out;
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        out.node_->requires_grad = true;
        break;
      }
    }
    if (!out.node_->requires_grad) return out;
    for (const auto& in : inputs) {
      if (in.requires_grad()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::move(backward);
    return out;
  }

  friend void backward(const Var& loss);

 private:
  std::shared_ptr<detail::Node> node_;
};

inline Var constant(Tensor value) { return Var(std::move(value), false); }
inline Var parameter(Tensor value) { return Var(std::move(value), true); }

/// Reverse pass from a scalar. Gradients accumulate into every participating
/// node that requires them.
inline void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  visited.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node_->accumulate(Tensor(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return Var::record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    a.accumulate_grad(g);
    b.accumulate_grad(g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return Var::record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    a.accumulate_grad(g);
    if (b.requires_grad()) {
      Tensor neg = g;
      for (double& v : neg.data()) v = -v;
      b.accumulate_grad(neg);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return Var::record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga = g;
      auto bv = b.value().data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      a.accumulate_grad(ga);
    }
    if (b.requires_grad()) {
      Tensor gb = g;
      auto av = a.value().data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      b.accumulate_grad(gb);
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return Var::record(std::move(out), {a}, [a, s](const Tensor& g) {
    Tensor ga = g;
    for (double& v : ga.data()) v *= s;
    a.accumulate_grad(ga);
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// x[n x d] + b[d] broadcast over rows.
inline Var add_row_bias(const Var& x, const Var& b) {
  kernels::require_rank(x.value(), 2, "add_row_bias");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (b.size() != d) throw DimensionError("add_row_bias: bias width mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += b.value()[j];
  return Var::record(std::move(out), {x, b}, [x, b, n, d](const Tensor& g) {
    x.accumulate_grad(g);
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      b.accumulate_grad(gb);
    }
  });
}

/// x[C x H x W] + b[C] broadcast over pixels.
inline Var add_channel_bias(const Var& x, const Var& b) {
  kernels::require_rank(x.value(), 3, "add_channel_bias");
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  if (b.size() != c) throw DimensionError("add_channel_bias: bias length mismatch");
  Tensor out = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += b.value()[ch];
  return Var::record(std::move(out), {x, b}, [x, b, c, hw](const Tensor& g) {
    x.accumulate_grad(g);
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) gb[ch] += g[ch * hw + p];
      b.accumulate_grad(gb);
    }
  });
}

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  return Var::record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) a.accumulate_grad(kernels::matmul(g, kernels::transpose(b.value())));
    if (b.requires_grad()) b.accumulate_grad(kernels::matmul(kernels::transpose(a.value()), g));
  });
}

inline Var transpose(const Var& a) {
  return Var::record(kernels::transpose(a.value()), {a},
                     [a](const Tensor& g) { a.accumulate_grad(kernels::transpose(g)); });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return Var::record(std::move(out), {x}, [x](const Tensor& g) {
    Tensor gx = g;
    auto xv = x.value().data();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(xv[i] > 0.0)) gx[i] = 0.0;
    x.accumulate_grad(gx);
  });
}

inline double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = sigmoid(v);
  Tensor y = out;
  return Var::record(std::move(out), {x}, [x, y = std::move(y)](const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
    x.accumulate_grad(gx);
  });
}

inline Var softmax_rows(const Var& x) {
  Tensor out = kernels::softmax_rows(x.value());
  Tensor y = out;
  return Var::record(std::move(out), {x}, [x, y = std::move(y)](const Tensor& g) {
    const std::size_t r = y.dim(0), c = y.dim(1);
    Tensor gx({r, c});
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
    }
    x.accumulate_grad(gx);
  });
}

inline constexpr double kLayerNormEps = 1e-5;

inline Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps = kLayerNormEps) {
  auto res = kernels::layernorm(x.value(), gain.value(), bias.value(), eps);
  Tensor out = std::move(res.output);
  return Var::record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xn = std::move(res.normalized), inv = std::move(res.inv_std)](const Tensor& g) {
        const std::size_t n = xn.dim(0), d = xn.dim(1);
        if (gain.requires_grad() || bias.requires_grad()) {
          Tensor gg({d}), gb({d});
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += g[i * d + j] * xn[i * d + j];
              gb[j] += g[i * d + j];
            }
          gain.accumulate_grad(gg);
          bias.accumulate_grad(gb);
        }
        if (x.requires_grad()) {
          Tensor gx({n, d});
          const double dd = static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[i * d + j] * gain.value()[j];
              mean_g += gh;
              mean_gx += gh * xn[i * d + j];
            }
            mean_g /= dd;
            mean_gx /= dd;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[i * d + j] * gain.value()[j];
              gx[i * d + j] = inv[i] * (gh - mean_g - xn[i * d + j] * mean_gx);
            }
          }
          x.accumulate_grad(gx);
        }
      });
}

inline Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
  Tensor out = kernels::conv2d(input.value(), kernel.value(), stride, padding);
  return Var::record(std::move(out), {input, kernel}, [input, kernel, stride, padding](const Tensor& g) {
    if (input.requires_grad())
      input.accumulate_grad(
          kernels::conv2d_backward_input(g, kernel.value(), input.shape(), stride, padding));
    if (kernel.requires_grad())
      kernel.accumulate_grad(
          kernels::conv2d_backward_kernel(g, input.value(), kernel.shape(), stride, padding));
  });
}

/// Horizontal concatenation of [n x d_i] blocks.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    kernels::require_rank(p.value(), 2, "concat_cols");
    if (p.shape()[0] != n) throw DimensionError("concat_cols: row count mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({n, total});
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + col + j] = parts[k].value()[i * widths[k] + j];
    col += widths[k];
  }
  return Var::record(std::move(out), parts, [parts, widths, n, total](const Tensor& g) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts[k].requires_grad()) {
        Tensor gk({n, widths[k]});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gk[i * widths[k] + j] = g[i * total + col + j];
        parts[k].accumulate_grad(gk);
      }
      col += widths[k];
    }
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::record(std::move(out), {x},
                     [x](const Tensor& g) { x.accumulate_grad(g.reshaped(x.shape())); });
}

/// [C x H x W] feature map -> [HW x C] token sequence (row-major positions).
inline Var map_to_sequence(const Var& map) {
  kernels::require_rank(map.value(), 3, "map_to_sequence");
  const std::size_t c = map.shape()[0], hw = map.shape()[1] * map.shape()[2];
  return transpose(reshape(map, {c, hw}));
}

/// [HW x C] token sequence -> [C x H x W] feature map.
inline Var sequence_to_map(const Var& seq, std::size_t height, std::size_t width) {
  kernels::require_rank(seq.value(), 2, "sequence_to_map");
  if (seq.shape()[0] != height * width) {
    throw DimensionError("sequence_to_map: " + std::to_string(seq.shape()[0]) +
                         " tokens cannot fill " + std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t c = seq.shape()[1];
  return reshape(transpose(seq), {c, height, width});
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Var::record(Tensor::scalar(s), {x},
                     [x](const Tensor& g) { x.accumulate_grad(Tensor(x.shape(), g[0])); });
}

}  // namespace trtr
