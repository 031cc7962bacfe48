#pragma once

// Differentiable operations on Tensor. Shapes must match exactly; the only
// broadcast is a one-element operand against a tensor of any shape.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "nmask/special.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

namespace detail {

inline bool is_scalar_like(const Shape& s) { return numel_of(s) == 1; }

inline void add_into(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

// Maps each flat input index to its flat index after removing `axes`.
struct ReductionPlan {
  Shape out_shape;
  std::vector<std::size_t> out_index;
  std::size_t out_numel = 1;
};

inline ReductionPlan make_reduction(const Shape& shape, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (auto a : axes)
    if (a >= shape.size())
      throw ShapeError("reduction axis " + std::to_string(a) + " out of range for " + shape_str(shape));
  std::vector<bool> reduced(shape.size(), false);
  for (auto a : axes) reduced[a] = true;

  ReductionPlan r;
  for (std::size_t d = 0; d < shape.size(); ++d)
    if (!reduced[d]) r.out_shape.push_back(shape[d]);
  r.out_numel = numel_of(r.out_shape);

  // Output stride of each input axis (0 for reduced axes).
  std::vector<std::size_t> ostride(shape.size(), 0);
  std::size_t s = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    if (!reduced[d]) {
      ostride[d] = s;
      s *= shape[d];
    }
  }
  const std::size_t n = numel_of(shape);
  r.out_index.resize(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t o = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r.out_index[i] = o;
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++idx[d];
      o += ostride[d];
      if (idx[d] < shape[d]) break;
      o -= ostride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return r;
}

template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  Array out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = fwd(in[i]);
  return Tensor::make(name, std::move(out), {x}, [deriv](Node& self) {
    auto& xin = *self.inputs[0];
    if (!xin.requires_grad) return;
    auto& g = xin.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * deriv(xin.value[i], self.value[i]);
  });
}

inline Shape binary_shape(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar_like(b.shape())) return a.shape();
  if (is_scalar_like(a.shape())) return b.shape();
  throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

// d(out)/d(a), d(out)/d(b) given (a_i, b_i); handles the one-element broadcast.
template <class Fwd, class Da, class Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  Shape shape = binary_shape(name, a, b);
  const std::size_t n = numel_of(shape);
  const bool a_bc = a.numel() != n;
  const bool b_bc = b.numel() != n;
  const auto& av = a.value();
  const auto& bv = b.value();
  Array out(shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_bc ? 0 : i], bv[b_bc ? 0 : i]);
  return Tensor::make(name, std::move(out), {a, b}, [=](Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        g[a_bc ? 0 : i] += self.grad[i] * da(an.value[a_bc ? 0 : i], bn.value[b_bc ? 0 : i]);
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        g[b_bc ? 0 : i] += self.grad[i] * db(an.value[a_bc ? 0 : i], bn.value[b_bc ? 0 : i]);
    }
  });
}

}  // namespace detail

// --- elementwise ---------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(
      "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.value().data())
    if (!(v > 0.0)) throw DomainError("log: nonpositive element");
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// log Gamma, element-wise; the backward pass multiplies by digamma.
inline Tensor lgamma(const Tensor& x) {
  for (double v : x.value().data())
    if (!(v > 0.0)) throw DomainError("lgamma: nonpositive element");
  return detail::unary(
      "lgamma", x, [](double v) { return std::lgamma(v); },
      [](double v, double) { return digamma(v); });
}

// --- shape ---------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  return Tensor::make("reshape", std::move(out), {x}, [](detail::Node& self) {
    auto& xin = *self.inputs[0];
    if (xin.requires_grad) detail::add_into(xin.grad_buffer(), self.grad);
  });
}

// --- reductions ----------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Tensor::make("sum", Array::scalar(s), {x}, [](detail::Node& self) {
    auto& xin = *self.inputs[0];
    if (!xin.requires_grad) return;
    auto& g = xin.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Sum over `axes`, removing them from the shape.
inline Tensor sum(const Tensor& x, std::vector<std::size_t> axes) {
  auto red = std::make_shared<detail::ReductionPlan>(detail::make_reduction(x.shape(), std::move(axes)));
  Array out(red->out_shape);
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.numel(); ++i) out[red->out_index[i]] += in[i];
  return Tensor::make("sum_axes", std::move(out), {x}, [red](detail::Node& self) {
    auto& xin = *self.inputs[0];
    if (!xin.requires_grad) return;
    auto& g = xin.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[red->out_index[i]];
  });
}

inline Tensor mean(const Tensor& x, std::vector<std::size_t> axes) {
  std::size_t count = 1;
  for (auto a : axes) count *= x.shape().at(a);
  return scale(sum(x, std::move(axes)), 1.0 / static_cast<double>(count));
}

/// log(sum(exp(x))) over `axes`, stabilised by the per-group maximum.
inline Tensor logsumexp(const Tensor& x, std::vector<std::size_t> axes) {
  auto red = std::make_shared<detail::ReductionPlan>(detail::make_reduction(x.shape(), std::move(axes)));
  const auto& in = x.value();
  std::vector<double> mx(red->out_numel, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < in.numel(); ++i) mx[red->out_index[i]] = std::max(mx[red->out_index[i]], in[i]);
  std::vector<double> acc(red->out_numel, 0.0);
  for (std::size_t i = 0; i < in.numel(); ++i) acc[red->out_index[i]] += std::exp(in[i] - mx[red->out_index[i]]);
  Array out(red->out_shape);
  for (std::size_t o = 0; o < red->out_numel; ++o) out[o] = mx[o] + std::log(acc[o]);
  return Tensor::make("logsumexp", std::move(out), {x}, [red](detail::Node& self) {
    auto& xin = *self.inputs[0];
    if (!xin.requires_grad) return;
    auto& g = xin.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t o = red->out_index[i];
      g[i] += self.grad[o] * std::exp(xin.value[i] - self.value[o]);
    }
  });
}

inline Tensor logsumexp(const Tensor& x) {
  std::vector<std::size_t> all(x.shape().size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (all.empty()) return reshape(x, Shape{});
  return logsumexp(x, all);
}

// --- linear algebra ------------------------------------------------------

/// [M,K] x [K,N] -> [M,N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& av = a.value();
  const auto& bv = b.value();
  Array out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv.data()[p * n];
      double* orow = &out.data()[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return Tensor::make("matmul", std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const auto& g = self.grad;
    if (an.requires_grad) {
      auto& ga = an.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn.value[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = an.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

/// x[N,D] + bias[D] (row broadcast).
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.shape().size() != 2 || bias.shape() != Shape{x.dim(1)})
    throw ShapeError("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  Array out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bias.value()[j];
  return Tensor::make("add_row_bias", std::move(out), {x, bias}, [n, d](detail::Node& self) {
    auto& xn = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (xn.requires_grad) detail::add_into(xn.grad_buffer(), self.grad);
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[i * d + j];
    }
  });
}

/// x[N,C,H,W] + bias[C] (per-channel broadcast).
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.shape().size() != 4 || bias.shape() != Shape{x.dim(1)})
    throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Array out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = &out.data()[(i * c + ch) * hw];
      for (std::size_t k = 0; k < hw; ++k) p[k] += bias.value()[ch];
    }
  return Tensor::make("add_channel_bias", std::move(out), {x, bias}, [n, c, hw](detail::Node& self) {
    auto& xn = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (xn.requires_grad) detail::add_into(xn.grad_buffer(), self.grad);
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double s = 0.0;
          const double* g = &self.grad[(i * c + ch) * hw];
          for (std::size_t k = 0; k < hw; ++k) s += g[k];
          gb[ch] += s;
        }
    }
  });
}

// --- convolution ---------------------------------------------------------

struct Conv2dGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
};

inline Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                                      std::size_t pad) {
  if (input.size() != 4 || kernel.size() != 4)
    throw ShapeError("conv2d: expected [N,C,H,W] input and [F,C,Kh,Kw] kernel, got " +
                     shape_str(input) + " and " + shape_str(kernel));
  if (input[1] != kernel[1])
    throw ShapeError("conv2d: input channels " + std::to_string(input[1]) + " != kernel channels " +
                     std::to_string(kernel[1]));
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (input[2] + 2 * pad < kernel[2] || input[3] + 2 * pad < kernel[3])
    throw ShapeError("conv2d: kernel larger than padded input");
  Conv2dGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3], stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

namespace detail {

// Output columns [lo, hi) whose input column ow*stride + k - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k,
                                                       std::size_t stride, std::size_t pad) {
  // need 0 <= o*stride + k - pad < in
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (in + pad > k) hi = std::min(out, (in + pad - k - 1) / stride + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace detail

/// Cross-correlation of input[N,C,H,W] with kernel[F,C,Kh,Kw], zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  const auto g = conv2d_geometry(input.shape(), kernel.shape(), stride, pad);
  const auto& x = input.value();
  const auto& w = kernel.value();
  Array out(Shape{g.n, g.f, g.oh, g.ow});

  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t f = 0; f < g.f; ++f) {
      double* o = &out.data()[(n * g.f + f) * g.oh * g.ow];
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* xin = &x.data()[(n * g.c + c) * g.h * g.w];
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
          const auto [oy0, oy1] = detail::valid_range(g.oh, g.h, ki, g.stride, g.pad);
          for (std::size_t kj = 0; kj < g.kw; ++kj) {
            const double wv = w[((f * g.c + c) * g.kh + ki) * g.kw + kj];
            const auto [ox0, ox1] = detail::valid_range(g.ow, g.w, kj, g.stride, g.pad);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const double* row = xin + (oy * g.stride + ki - g.pad) * g.w;
              double* orow = o + oy * g.ow;
              for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox * g.stride + kj - g.pad];
            }
          }
        }
      }
    }

  return Tensor::make("conv2d", std::move(out), {input, kernel}, [g](detail::Node& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    const auto& gout = self.grad;
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t f = 0; f < g.f; ++f) {
        const double* go = &gout[(n * g.f + f) * g.oh * g.ow];
        for (std::size_t c = 0; c < g.c; ++c) {
          const std::size_t xoff = (n * g.c + c) * g.h * g.w;
          for (std::size_t ki = 0; ki < g.kh; ++ki) {
            const auto [oy0, oy1] = detail::valid_range(g.oh, g.h, ki, g.stride, g.pad);
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
              const std::size_t widx = ((f * g.c + c) * g.kh + ki) * g.kw + kj;
              const auto [ox0, ox1] = detail::valid_range(g.ow, g.w, kj, g.stride, g.pad);
              double wgrad = 0.0;
              const double wv = wn.value[widx];
              for (std::size_t oy = oy0; oy < oy1; ++oy) {
                const std::size_t rbase = xoff + (oy * g.stride + ki - g.pad) * g.w;
                const double* grow = go + oy * g.ow;
                if (wn.requires_grad) {
                  const double* row = &xn.value.data()[rbase];
                  for (std::size_t ox = ox0; ox < ox1; ++ox) wgrad += grow[ox] * row[ox * g.stride + kj - g.pad];
                }
                if (xn.requires_grad) {
                  double* gx = &xn.grad_buffer()[rbase];
                  for (std::size_t ox = ox0; ox < ox1; ++ox) gx[ox * g.stride + kj - g.pad] += wv * grow[ox];
                }
              }
              if (wn.requires_grad) wn.grad_buffer()[widx] += wgrad;
            }
          }
        }
      }
  });
}

// --- losses --------------------------------------------------------------

/// Per-sample -log softmax(logits)[label]; logits [N,C] -> [N].
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2) throw ShapeError("cross_entropy: logits must be [N,C]");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (n == 0) throw ContractError("cross_entropy: empty batch");
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range for " + std::to_string(c) +
                       " classes");
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  auto probs = std::make_shared<std::vector<double>>(n * c);
  const auto& z = logits.value();
  Array out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &z.data()[i * c];
    const double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
    out[i] = lse - row[(*lab)[i]];
  }
  return Tensor::make("cross_entropy", std::move(out), {logits}, [n, c, lab, probs](detail::Node& self) {
    auto& zn = *self.inputs[0];
    if (!zn.requires_grad) return;
    auto& g = zn.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double onehot = (static_cast<std::size_t>((*lab)[i]) == j) ? 1.0 : 0.0;
        g[i * c + j] += self.grad[i] * ((*probs)[i * c + j] - onehot);
      }
  });
}

inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  return cross_entropy(logits, std::span<const int>(labels));
}

}  // namespace nmask
