#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trtr {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand extents do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid model or tracker configuration (head count, layer count, sizes).
struct ConfigError : Error {
  using Error::Error;
};

// Invalid scalar argument (e.g. non-positive sigma).
struct ParameterError : Error {
  using Error::Error;
};

// Misuse of the gradient API, e.g. backward() on a non-scalar.
struct ContractError : Error {
  using Error::Error;
};

struct InputError : Error {
  using Error::Error;
};

struct TrackingError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << 'x';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

// ---------------------------------------------------------------------------
// Tensor: dense row-major array of doubles with value semantics.
// ---------------------------------------------------------------------------

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  template <typename... I>
  double& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  double operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  template <typename... I>
  std::size_t offset(I... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizeof...(I); ++k) off = off * shape_[k] + index[k];
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Plain kernels. These carry no gradient bookkeeping; the autodiff layer and
// the online solver both build on them.
// ---------------------------------------------------------------------------

namespace kernels {

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double* orow = out.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= z;
  }
  return out;
}

struct LayerNormResult {
  Tensor output;
  Tensor normalized;           // (x - mean) * inv_std, before the affine part
  std::vector<double> inv_std; // per row
};

inline LayerNormResult layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                                 double eps) {
  require_rank(x, 2, "layernorm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (d == 0) throw DimensionError("layernorm: zero-width rows");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layernorm: gain/bias width does not match " + shape_string(x.shape()));
  }
  LayerNormResult res{Tensor({n, d}), Tensor({n, d}), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    // Zero-variance rows with eps == 0 map to zeros rather than NaN.
    const double denom = var + eps;
    const double inv = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    res.inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xn = (row[j] - mean) * inv;
      res.normalized[i * d + j] = xn;
      res.output[i * d + j] = xn * gain[j] + bias[j];
    }
  }
  return res;
}

struct ConvGeometry {
  std::size_t in_channels, in_h, in_w;
  std::size_t out_channels, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                                  std::size_t padding) {
  if (input.size() != 3) throw DimensionError("conv2d: input must be C x H x W");
  if (kernel.size() != 4) throw DimensionError("conv2d: kernel must be Cout x Cin x kh x kw");
  if (kernel[1] != input[0]) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel[1]) +
                         " input channels, got " + std::to_string(input[0]));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{input[0], input[1], input[2], kernel[0], kernel[2], kernel[3],
                 stride,   padding,  0,        0};
  const long long span_h = static_cast<long long>(g.in_h + 2 * padding) - static_cast<long long>(g.kh);
  const long long span_w = static_cast<long long>(g.in_w + 2 * padding) - static_cast<long long>(g.kw);
  if (span_h < 0 || span_w < 0 || span_h % static_cast<long long>(stride) != 0 ||
      span_w % static_cast<long long>(stride) != 0) {
    throw DimensionError("conv2d: output extent is not integral for input " +
                         shape_string(input) + ", kernel " + shape_string(kernel) +
                         ", stride " + std::to_string(stride) + ", padding " +
                         std::to_string(padding));
  }
  g.out_h = static_cast<std::size_t>(span_h) / stride + 1;
  g.out_w = static_cast<std::size_t>(span_w) / stride + 1;
  return g;
}

// Cross-correlation with zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                     std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  Tensor out({g.out_channels, g.out_h, g.out_w});
  const double* in = input.data().data();
  const double* kr = kernel.data().data();
  double* po = out.data().data();
  const long long pad = static_cast<long long>(padding);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const double* kc = kr + (o * g.in_channels + c) * g.kh * g.kw;
      const double* ic = in + c * g.in_h * g.in_w;
      for (std::size_t y = 0; y < g.out_h; ++y) {
        double* orow = po + (o * g.out_h + y) * g.out_w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long long iy = static_cast<long long>(y * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(g.in_h)) continue;
          const double* irow = ic + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const double kv = kc[ky * g.kw + kx];
            for (std::size_t x = 0; x < g.out_w; ++x) {
              const long long ix = static_cast<long long>(x * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long long>(g.in_w)) continue;
              orow[x] += kv * irow[ix];
            }
          }
        }
      }
    }
  }
  return out;
}

// d(out)/d(input) contracted with grad_out.
inline Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel,
                                    const Shape& input_shape, std::size_t stride,
                                    std::size_t padding) {
  const ConvGeometry g = conv_geometry(input_shape, kernel.shape(), stride, padding);
  Tensor gin(input_shape);
  const double* go = grad_out.data().data();
  const double* kr = kernel.data().data();
  double* gi = gin.data().data();
  const long long pad = static_cast<long long>(padding);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const double* kc = kr + (o * g.in_channels + c) * g.kh * g.kw;
      double* gc = gi + c * g.in_h * g.in_w;
      for (std::size_t y = 0; y < g.out_h; ++y) {
        const double* grow = go + (o * g.out_h + y) * g.out_w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long long iy = static_cast<long long>(y * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(g.in_h)) continue;
          double* irow = gc + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const double kv = kc[ky * g.kw + kx];
            for (std::size_t x = 0; x < g.out_w; ++x) {
              const long long ix = static_cast<long long>(x * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long long>(g.in_w)) continue;
              irow[ix] += kv * grow[x];
            }
          }
        }
      }
    }
  }
  return gin;
}

// d(out)/d(kernel) contracted with grad_out.
inline Tensor conv2d_backward_kernel(const Tensor& grad_out, const Tensor& input,
                                     const Shape& kernel_shape, std::size_t stride,
                                     std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel_shape, stride, padding);
  Tensor gk(kernel_shape);
  const double* go = grad_out.data().data();
  const double* in = input.data().data();
  double* pk = gk.data().data();
  const long long pad = static_cast<long long>(padding);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      double* kc = pk + (o * g.in_channels + c) * g.kh * g.kw;
      const double* ic = in + c * g.in_h * g.in_w;
      for (std::size_t y = 0; y < g.out_h; ++y) {
        const double* grow = go + (o * g.out_h + y) * g.out_w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long long iy = static_cast<long long>(y * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(g.in_h)) continue;
          const double* irow = ic + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            double acc = 0.0;
            for (std::size_t x = 0; x < g.out_w; ++x) {
              const long long ix = static_cast<long long>(x * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long long>(g.in_w)) continue;
              acc += grow[x] * irow[ix];
            }
            kc[ky * g.kw + kx] += acc;
          }
        }
      }
    }
  }
  return gk;
}

}  // namespace kernels
}  // namespace trtr
