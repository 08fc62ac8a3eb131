#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rsd/tensor.hpp"

// Differentiable op set. Free functions build graph nodes; no implicit
// broadcasting anywhere (tensor-scalar has explicit *_scalar ops, bias adds
// have explicit row/channel variants). Binary ops require identical shapes.

namespace rsd {

namespace detail {

template <typename S>
inline void check_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename S>
inline void check_rank(const char* op, const TensorT<S>& t, int rank) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape("add", a, b);
  return detail::make_op<S>("add", a.shape(), a.data() + b.data(), {a, b}, [a, b](NodeT<S>& self) {
    if (a.requires_grad()) a.node()->accum_grad(self.grad);
    if (b.requires_grad()) b.node()->accum_grad(self.grad);
  });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape("sub", a, b);
  return detail::make_op<S>("sub", a.shape(), a.data() - b.data(), {a, b}, [a, b](NodeT<S>& self) {
    if (a.requires_grad()) a.node()->accum_grad(self.grad);
    if (b.requires_grad()) b.node()->accum_grad((-self.grad).eval());
  });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape("mul", a, b);
  return detail::make_op<S>("mul", a.shape(), a.data() * b.data(), {a, b}, [a, b](NodeT<S>& self) {
    if (a.requires_grad()) a.node()->accum_grad((self.grad * b.data()).eval());
    if (b.requires_grad()) b.node()->accum_grad((self.grad * a.data()).eval());
  });
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  return detail::make_op<S>("add_scalar", a.shape(), a.data() + c, {a}, [a](NodeT<S>& self) {
    a.node()->accum_grad(self.grad);
  });
}

template <typename S>
TensorT<S> mul_scalar(const TensorT<S>& a, S c) {
  return detail::make_op<S>("mul_scalar", a.shape(), a.data() * c, {a}, [a, c](NodeT<S>& self) {
    a.node()->accum_grad((self.grad * c).eval());
  });
}

/// relu with subgradient 0 at 0.
template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  return detail::make_op<S>("relu", a.shape(), a.data().max(S(0)), {a}, [a](NodeT<S>& self) {
    Array<S> g = self.grad;
    const auto& v = a.data();
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (v[i] <= S(0)) g[i] = S(0);
    a.node()->accum_grad(g);
  });
}

template <typename S>
TensorT<S> tanh(const TensorT<S>& a) {
  return detail::make_op<S>("tanh", a.shape(), a.data().tanh(), {a}, [a](NodeT<S>& self) {
    a.node()->accum_grad((self.grad * (S(1) - self.value * self.value)).eval());
  });
}

/// Pass-through gradient on [lo, hi] inclusive, zero outside.
template <typename S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
  if (!(lo <= hi)) throw UsageError("clamp: lo > hi");
  return detail::make_op<S>("clamp", a.shape(), a.data().max(lo).min(hi), {a},
                            [a, lo, hi](NodeT<S>& self) {
                              Array<S> g = self.grad;
                              const auto& v = a.data();
                              for (Eigen::Index i = 0; i < g.size(); ++i)
                                if (v[i] < lo || v[i] > hi) g[i] = S(0);
                              a.node()->accum_grad(g);
                            });
}

template <typename S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) {
  return add(a, b);
}
template <typename S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) {
  return sub(a, b);
}
template <typename S>
TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_rank("matmul", a, 2);
  detail::check_rank("matmul", b, 2);
  const std::int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Array<S> out(m * n);
  MapConstMat<S> A(a.raw(), m, k), B(b.raw(), k, n);
  MapMat<S>(out.data(), m, n).noalias() = A * B;
  return detail::make_op<S>("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](NodeT<S>& self) {
    MapConstMat<S> A(a.raw(), m, k), B(b.raw(), k, n), G(self.grad.data(), m, n);
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      MapMat<S>(a.node()->grad.data(), m, k).noalias() += G * B.transpose();
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      MapMat<S>(b.node()->grad.data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

/// out[r, c] = m[r, c] + v[c]
template <typename S>
TensorT<S> add_rowvec(const TensorT<S>& m, const TensorT<S>& v) {
  detail::check_rank("add_rowvec", m, 2);
  detail::check_rank("add_rowvec", v, 1);
  const std::int64_t rows = m.dim(0), cols = m.dim(1);
  if (v.dim(0) != cols) throw DimensionError("add_rowvec: vector length != columns");
  Array<S> out(rows * cols);
  MapMat<S> O(out.data(), rows, cols);
  O = MapConstMat<S>(m.raw(), rows, cols);
  O.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(v.raw(), cols);
  return detail::make_op<S>("add_rowvec", m.shape(), std::move(out), {m, v},
                            [m, v, rows, cols](NodeT<S>& self) {
                              MapConstMat<S> G(self.grad.data(), rows, cols);
                              if (m.requires_grad()) m.node()->accum_grad(self.grad);
                              if (v.requires_grad()) {
                                v.node()->ensure_grad();
                                Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(v.node()->grad.data(), cols) +=
                                    G.colwise().sum();
                              }
                            });
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return detail::make_op<S>("reshape", std::move(shape), Array<S>(a.data()), {a},
                            [a](NodeT<S>& self) { a.node()->accum_grad(self.grad); });
}

/// Concatenate two [N,C,H,W] tensors along the channel axis.
template <typename S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_rank("concat_channels", a, 4);
  detail::check_rank("concat_channels", b, 4);
  const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w)
    throw DimensionError("concat_channels: non-channel dims disagree");
  const std::int64_t hw = h * w, co = ca + cb;
  Array<S> out(n * co * hw);
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.raw() + i * ca * hw, ca * hw, out.data() + i * co * hw);
    std::copy_n(b.raw() + i * cb * hw, cb * hw, out.data() + i * co * hw + ca * hw);
  }
  return detail::make_op<S>("concat_channels", {n, co, h, w}, std::move(out), {a, b},
                            [a, b, n, ca, cb, hw](NodeT<S>& self) {
                              const std::int64_t co = ca + cb;
                              if (a.requires_grad()) {
                                a.node()->ensure_grad();
                                for (std::int64_t i = 0; i < n; ++i)
                                  Eigen::Map<Array<S>>(a.node()->grad.data() + i * ca * hw, ca * hw) +=
                                      Eigen::Map<const Array<S>>(self.grad.data() + i * co * hw, ca * hw);
                              }
                              if (b.requires_grad()) {
                                b.node()->ensure_grad();
                                for (std::int64_t i = 0; i < n; ++i)
                                  Eigen::Map<Array<S>>(b.node()->grad.data() + i * cb * hw, cb * hw) +=
                                      Eigen::Map<const Array<S>>(self.grad.data() + i * co * hw + ca * hw,
                                                                 cb * hw);
                              }
                            });
}

template <typename S>
TensorT<S> slice_channels(const TensorT<S>& a, std::int64_t from, std::int64_t count) {
  detail::check_rank("slice_channels", a, 4);
  const std::int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3), hw = h * w;
  if (from < 0 || count < 1 || from + count > c) throw DimensionError("slice_channels: range out of bounds");
  Array<S> out(n * count * hw);
  for (std::int64_t i = 0; i < n; ++i)
    std::copy_n(a.raw() + (i * c + from) * hw, count * hw, out.data() + i * count * hw);
  return detail::make_op<S>("slice_channels", {n, count, h, w}, std::move(out), {a},
                            [a, n, c, from, count, hw](NodeT<S>& self) {
                              a.node()->ensure_grad();
                              for (std::int64_t i = 0; i < n; ++i)
                                Eigen::Map<Array<S>>(a.node()->grad.data() + (i * c + from) * hw, count * hw) +=
                                    Eigen::Map<const Array<S>>(self.grad.data() + i * count * hw, count * hw);
                            });
}

// ---------------------------------------------------------------------------
// conv / pooling / pointwise

namespace detail {

template <typename S>
void im2col(const S* x, std::int64_t c_in, std::int64_t h, std::int64_t w, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo,
            S* cols) {
  // cols is [c_in*kh*kw, ho*wo] row-major
  for (std::int64_t c = 0; c < c_in; ++c)
    for (std::int64_t u = 0; u < kh; ++u)
      for (std::int64_t v = 0; v < kw; ++v) {
        S* row = cols + ((c * kh + u) * kw + v) * ho * wo;
        for (std::int64_t i = 0; i < ho; ++i) {
          const std::int64_t si = i * stride + u - pad;
          for (std::int64_t j = 0; j < wo; ++j) {
            const std::int64_t sj = j * stride + v - pad;
            row[i * wo + j] =
                (si >= 0 && si < h && sj >= 0 && sj < w) ? x[(c * h + si) * w + sj] : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const S* cols, std::int64_t c_in, std::int64_t h, std::int64_t w, std::int64_t kh,
                std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho,
                std::int64_t wo, S* dx) {
  for (std::int64_t c = 0; c < c_in; ++c)
    for (std::int64_t u = 0; u < kh; ++u)
      for (std::int64_t v = 0; v < kw; ++v) {
        const S* row = cols + ((c * kh + u) * kw + v) * ho * wo;
        for (std::int64_t i = 0; i < ho; ++i) {
          const std::int64_t si = i * stride + u - pad;
          if (si < 0 || si >= h) continue;
          for (std::int64_t j = 0; j < wo; ++j) {
            const std::int64_t sj = j * stride + v - pad;
            if (sj >= 0 && sj < w) dx[(c * h + si) * w + sj] += row[i * wo + j];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation; zero padding; H' = floor((H+2p-k)/stride)+1.
/// Accepts [N,Cin,H,W] or [Cin,H,W] input, kernel [Cout,Cin,kh,kw].
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel, std::int64_t stride = 1,
                  std::int64_t pad = 0) {
  const bool batched = x.rank() == 4;
  if (!batched) detail::check_rank("conv2d", x, 3);
  detail::check_rank("conv2d", kernel, 4);
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (pad < 0) throw DimensionError("conv2d: negative padding");
  const std::int64_t n = batched ? x.dim(0) : 1;
  const std::int64_t c_in = batched ? x.dim(1) : x.dim(0);
  const std::int64_t h = batched ? x.dim(2) : x.dim(1);
  const std::int64_t w = batched ? x.dim(3) : x.dim(2);
  const std::int64_t c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c_in) throw DimensionError("conv2d: kernel input channels != input channels");
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw DimensionError("conv2d: kernel larger than padded input");
  const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t wo = (w + 2 * pad - kw) / stride + 1;
  const std::int64_t krows = c_in * kh * kw, cols_n = ho * wo;

  const bool keep_cols = x.requires_grad() || kernel.requires_grad();
  auto cols = std::make_shared<Array<S>>(keep_cols ? n * krows * cols_n : krows * cols_n);
  Array<S> out(n * c_out * cols_n);
  MapConstMat<S> K(kernel.raw(), c_out, krows);
  for (std::int64_t i = 0; i < n; ++i) {
    S* col_i = cols->data() + (keep_cols ? i * krows * cols_n : 0);
    detail::im2col(x.raw() + i * c_in * h * w, c_in, h, w, kh, kw, stride, pad, ho, wo, col_i);
    MapMat<S>(out.data() + i * c_out * cols_n, c_out, cols_n).noalias() =
        K * MapConstMat<S>(col_i, krows, cols_n);
  }

  Shape out_shape = batched ? Shape{n, c_out, ho, wo} : Shape{c_out, ho, wo};
  return detail::make_op<S>(
      "conv2d", std::move(out_shape), std::move(out), {x, kernel},
      [x, kernel, cols, n, c_in, h, w, kh, kw, stride, pad, ho, wo, c_out, krows,
       cols_n](NodeT<S>& self) {
        MapConstMat<S> K(kernel.raw(), c_out, krows);
        if (kernel.requires_grad()) kernel.node()->ensure_grad();
        if (x.requires_grad()) x.node()->ensure_grad();
        Array<S> dcols(krows * cols_n);
        for (std::int64_t i = 0; i < n; ++i) {
          MapConstMat<S> G(self.grad.data() + i * c_out * cols_n, c_out, cols_n);
          MapConstMat<S> C(cols->data() + i * krows * cols_n, krows, cols_n);
          if (kernel.requires_grad())
            MapMat<S>(kernel.node()->grad.data(), c_out, krows).noalias() += G * C.transpose();
          if (x.requires_grad()) {
            MapMat<S>(dcols.data(), krows, cols_n).noalias() = K.transpose() * G;
            detail::col2im_add(dcols.data(), c_in, h, w, kh, kw, stride, pad, ho, wo,
                               x.node()->grad.data() + i * c_in * h * w);
          }
        }
      });
}

/// out[n,c,:,:] = x[n,c,:,:] + b[c]
template <typename S>
TensorT<S> add_channel_bias(const TensorT<S>& x, const TensorT<S>& b) {
  const bool batched = x.rank() == 4;
  if (!batched) detail::check_rank("add_channel_bias", x, 3);
  detail::check_rank("add_channel_bias", b, 1);
  const std::int64_t n = batched ? x.dim(0) : 1;
  const std::int64_t c = batched ? x.dim(1) : x.dim(0);
  const std::int64_t hw = batched ? x.dim(2) * x.dim(3) : x.dim(1) * x.dim(2);
  if (b.dim(0) != c) throw DimensionError("add_channel_bias: bias length != channels");
  Array<S> out(x.numel());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      Eigen::Map<Array<S>>(out.data() + (i * c + ch) * hw, hw) =
          Eigen::Map<const Array<S>>(x.raw() + (i * c + ch) * hw, hw) + b.data()[ch];
  return detail::make_op<S>("add_channel_bias", x.shape(), std::move(out), {x, b},
                            [x, b, n, c, hw](NodeT<S>& self) {
                              if (x.requires_grad()) x.node()->accum_grad(self.grad);
                              if (b.requires_grad()) {
                                b.node()->ensure_grad();
                                for (std::int64_t i = 0; i < n; ++i)
                                  for (std::int64_t ch = 0; ch < c; ++ch)
                                    b.node()->grad[ch] +=
                                        Eigen::Map<const Array<S>>(self.grad.data() + (i * c + ch) * hw, hw)
                                            .sum();
                              }
                            });
}

/// 2x2 average pooling, stride 2; spatial dims must be even.
template <typename S>
TensorT<S> avg_pool2(const TensorT<S>& x) {
  detail::check_rank("avg_pool2", x, 4);
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw DimensionError("avg_pool2: spatial dims must be even");
  const std::int64_t ho = h / 2, wo = w / 2;
  Array<S> out(n * c * ho * wo);
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const S* src = x.raw() + nc * h * w;
    S* dst = out.data() + nc * ho * wo;
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j)
        dst[i * wo + j] = (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
                           src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]) *
                          S(0.25);
  }
  return detail::make_op<S>("avg_pool2", {n, c, ho, wo}, std::move(out), {x},
                            [x, n, c, h, w, ho, wo](NodeT<S>& self) {
                              x.node()->ensure_grad();
                              for (std::int64_t nc = 0; nc < n * c; ++nc) {
                                const S* g = self.grad.data() + nc * ho * wo;
                                S* dx = x.node()->grad.data() + nc * h * w;
                                for (std::int64_t i = 0; i < ho; ++i)
                                  for (std::int64_t j = 0; j < wo; ++j) {
                                    const S q = g[i * wo + j] * S(0.25);
                                    dx[(2 * i) * w + 2 * j] += q;
                                    dx[(2 * i) * w + 2 * j + 1] += q;
                                    dx[(2 * i + 1) * w + 2 * j] += q;
                                    dx[(2 * i + 1) * w + 2 * j + 1] += q;
                                  }
                              }
                            });
}

/// Per-pixel linear map over channels: out[n,o,i,j] = sum_c w[o,c]*x[n,c,i,j] + b[o].
/// Equivalent to a 1x1 convolution; used for the query/shift perceptrons.
template <typename S>
TensorT<S> pointwise_linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  detail::check_rank("pointwise_linear", x, 4);
  detail::check_rank("pointwise_linear", w, 2);
  detail::check_rank("pointwise_linear", b, 1);
  const std::int64_t n = x.dim(0), c_in = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::int64_t c_out = w.dim(0);
  if (w.dim(1) != c_in) throw DimensionError("pointwise_linear: weight columns != input channels");
  if (b.dim(0) != c_out) throw DimensionError("pointwise_linear: bias length != output channels");
  Array<S> out(n * c_out * hw);
  MapConstMat<S> W(w.raw(), c_out, c_in);
  for (std::int64_t i = 0; i < n; ++i) {
    MapConstMat<S> X(x.raw() + i * c_in * hw, c_in, hw);
    MapMat<S> O(out.data() + i * c_out * hw, c_out, hw);
    O.noalias() = W * X;
    O.colwise() += Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>>(b.raw(), c_out);
  }
  return detail::make_op<S>(
      "pointwise_linear", {n, c_out, x.dim(2), x.dim(3)}, std::move(out), {x, w, b},
      [x, w, b, n, c_in, c_out, hw](NodeT<S>& self) {
        MapConstMat<S> W(w.raw(), c_out, c_in);
        if (x.requires_grad()) x.node()->ensure_grad();
        if (w.requires_grad()) w.node()->ensure_grad();
        if (b.requires_grad()) b.node()->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
          MapConstMat<S> G(self.grad.data() + i * c_out * hw, c_out, hw);
          if (x.requires_grad())
            MapMat<S>(x.node()->grad.data() + i * c_in * hw, c_in, hw).noalias() += W.transpose() * G;
          if (w.requires_grad())
            MapMat<S>(w.node()->grad.data(), c_out, c_in).noalias() +=
                G * MapConstMat<S>(x.raw() + i * c_in * hw, c_in, hw).transpose();
          if (b.requires_grad())
            Eigen::Map<Eigen::Vector<S, Eigen::Dynamic>>(b.node()->grad.data(), c_out) +=
                G.rowwise().sum();
        }
      });
}

/// out[n,c,i,j] = x[n,c,:,:] * scale[n,0,i,j] — per-pixel scalar weights
/// applied across all channels (the local-ensemble blend).
template <typename S>
TensorT<S> scale_channels(const TensorT<S>& x, const TensorT<S>& scale) {
  detail::check_rank("scale_channels", x, 4);
  detail::check_rank("scale_channels", scale, 4);
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (scale.dim(0) != n || scale.dim(1) != 1 || scale.dim(2) != x.dim(2) || scale.dim(3) != x.dim(3))
    throw DimensionError("scale_channels: scale must be [N,1,H,W] matching x");
  Array<S> out(x.numel());
  for (std::int64_t i = 0; i < n; ++i) {
    Eigen::Map<const Array<S>> s(scale.raw() + i * hw, hw);
    for (std::int64_t ch = 0; ch < c; ++ch)
      Eigen::Map<Array<S>>(out.data() + (i * c + ch) * hw, hw) =
          Eigen::Map<const Array<S>>(x.raw() + (i * c + ch) * hw, hw) * s;
  }
  return detail::make_op<S>(
      "scale_channels", x.shape(), std::move(out), {x, scale},
      [x, scale, n, c, hw](NodeT<S>& self) {
        if (x.requires_grad()) {
          x.node()->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) {
            Eigen::Map<const Array<S>> s(scale.raw() + i * hw, hw);
            for (std::int64_t ch = 0; ch < c; ++ch)
              Eigen::Map<Array<S>>(x.node()->grad.data() + (i * c + ch) * hw, hw) +=
                  Eigen::Map<const Array<S>>(self.grad.data() + (i * c + ch) * hw, hw) * s;
          }
        }
        if (scale.requires_grad()) {
          scale.node()->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) {
            Eigen::Map<Array<S>> ds(scale.node()->grad.data() + i * hw, hw);
            for (std::int64_t ch = 0; ch < c; ++ch)
              ds += Eigen::Map<const Array<S>>(self.grad.data() + (i * c + ch) * hw, hw) *
                    Eigen::Map<const Array<S>>(x.raw() + (i * c + ch) * hw, hw);
          }
        }
      });
}

/// Per-pixel spatial gather: out[n,c,p,q] = x[n,c, rows[n,p,q], cols[n,p,q]].
/// Indices are data (no gradient path); gradients scatter-add into x.
template <typename S>
TensorT<S> gather_hw(const TensorT<S>& x, const std::vector<std::int32_t>& rows,
                     const std::vector<std::int32_t>& cols, std::int64_t ho, std::int64_t wo) {
  detail::check_rank("gather_hw", x, 4);
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (static_cast<std::int64_t>(rows.size()) != n * ho * wo || rows.size() != cols.size())
    throw DimensionError("gather_hw: index map size mismatch");
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i] < 0 || rows[i] >= h || cols[i] < 0 || cols[i] >= w)
      throw DimensionError("gather_hw: index out of range");
  Array<S> out(n * c * ho * wo);
  const std::int64_t hw = h * w, howo = ho * wo;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int32_t* r = rows.data() + i * howo;
    const std::int32_t* cl = cols.data() + i * howo;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const S* src = x.raw() + (i * c + ch) * hw;
      S* dst = out.data() + (i * c + ch) * howo;
      for (std::int64_t p = 0; p < howo; ++p) dst[p] = src[r[p] * w + cl[p]];
    }
  }
  auto ridx = std::make_shared<std::vector<std::int32_t>>(rows);
  auto cidx = std::make_shared<std::vector<std::int32_t>>(cols);
  return detail::make_op<S>("gather_hw", {n, c, ho, wo}, std::move(out), {x},
                            [x, ridx, cidx, n, c, hw, howo, w](NodeT<S>& self) {
                              x.node()->ensure_grad();
                              for (std::int64_t i = 0; i < n; ++i) {
                                const std::int32_t* r = ridx->data() + i * howo;
                                const std::int32_t* cl = cidx->data() + i * howo;
                                for (std::int64_t ch = 0; ch < c; ++ch) {
                                  S* dx = x.node()->grad.data() + (i * c + ch) * hw;
                                  const S* g = self.grad.data() + (i * c + ch) * howo;
                                  for (std::int64_t p = 0; p < howo; ++p) dx[r[p] * w + cl[p]] += g[p];
                                }
                              }
                            });
}

/// 3x3 neighborhood unfold with clamp-to-edge:
/// out[n, t*C+c, i, j] = x[n, c, clamp(i+di), clamp(j+dj)], t = (di+1)*3+(dj+1).
template <typename S>
TensorT<S> unfold3x3(const TensorT<S>& x) {
  detail::check_rank("unfold3x3", x, 4);
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w;
  Array<S> out(n * 9 * c * hw);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t t = 0; t < 9; ++t) {
      const std::int64_t di = t / 3 - 1, dj = t % 3 - 1;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const S* src = x.raw() + (i * c + ch) * hw;
        S* dst = out.data() + (i * 9 * c + t * c + ch) * hw;
        for (std::int64_t r = 0; r < h; ++r) {
          const std::int64_t sr = std::clamp(r + di, std::int64_t(0), h - 1);
          for (std::int64_t q = 0; q < w; ++q)
            dst[r * w + q] = src[sr * w + std::clamp(q + dj, std::int64_t(0), w - 1)];
        }
      }
    }
  return detail::make_op<S>(
      "unfold3x3", {n, 9 * c, h, w}, std::move(out), {x}, [x, n, c, h, w, hw](NodeT<S>& self) {
        x.node()->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t t = 0; t < 9; ++t) {
            const std::int64_t di = t / 3 - 1, dj = t % 3 - 1;
            for (std::int64_t ch = 0; ch < c; ++ch) {
              S* dx = x.node()->grad.data() + (i * c + ch) * hw;
              const S* g = self.grad.data() + (i * 9 * c + t * c + ch) * hw;
              for (std::int64_t r = 0; r < h; ++r) {
                const std::int64_t sr = std::clamp(r + di, std::int64_t(0), h - 1);
                for (std::int64_t q = 0; q < w; ++q)
                  dx[sr * w + std::clamp(q + dj, std::int64_t(0), w - 1)] += g[r * w + q];
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// reductions / losses

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  Array<S> out(1);
  out[0] = a.data().sum();
  return detail::make_op<S>("sum", {1}, std::move(out), {a}, [a](NodeT<S>& self) {
    a.node()->accum_grad(Array<S>::Constant(a.numel(), self.grad[0]).eval());
  });
}

template <typename S>
TensorT<S> mean(const TensorT<S>& a) {
  Array<S> out(1);
  out[0] = a.data().mean();
  return detail::make_op<S>("mean", {1}, std::move(out), {a}, [a](NodeT<S>& self) {
    a.node()->accum_grad(Array<S>::Constant(a.numel(), self.grad[0] / S(a.numel())).eval());
  });
}

/// Mean absolute error; subgradient 0 at zero difference.
template <typename S>
TensorT<S> l1_loss(const TensorT<S>& pred, const TensorT<S>& target) {
  detail::check_same_shape("l1_loss", pred, target);
  Array<S> out(1);
  out[0] = (pred.data() - target.data()).abs().mean();
  return detail::make_op<S>("l1_loss", {1}, std::move(out), {pred, target},
                            [pred, target](NodeT<S>& self) {
                              const S scale = self.grad[0] / S(pred.numel());
                              Array<S> d = pred.data() - target.data();
                              Array<S> g = d.sign() * scale;
                              if (pred.requires_grad()) pred.node()->accum_grad(g);
                              if (target.requires_grad()) target.node()->accum_grad((-g).eval());
                            });
}

/// Mean softmax cross-entropy over rows of [N,K] logits against integer
/// class labels (log-sum-exp stabilized).
template <typename S>
TensorT<S> softmax_cross_entropy(const TensorT<S>& logits, const std::vector<std::int32_t>& labels) {
  detail::check_rank("softmax_cross_entropy", logits, 2);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw DimensionError("softmax_cross_entropy: label count != rows");
  for (auto y : labels)
    if (y < 0 || y >= k)
      throw DomainError("softmax_cross_entropy: class index " + std::to_string(y) + " out of range");
  Array<S> out(1);
  S total = S(0);
  for (std::int64_t i = 0; i < n; ++i) {
    Eigen::Map<const Array<S>> row(logits.raw() + i * k, k);
    const S m = row.maxCoeff();
    const S lse = m + std::log((row - m).exp().sum());
    total += lse - row[labels[static_cast<std::size_t>(i)]];
  }
  out[0] = total / S(n);
  auto ys = std::make_shared<std::vector<std::int32_t>>(labels);
  return detail::make_op<S>("softmax_cross_entropy", {1}, std::move(out), {logits},
                            [logits, ys, n, k](NodeT<S>& self) {
                              logits.node()->ensure_grad();
                              const S scale = self.grad[0] / S(n);
                              for (std::int64_t i = 0; i < n; ++i) {
                                Eigen::Map<const Array<S>> row(logits.raw() + i * k, k);
                                Eigen::Map<Array<S>> g(logits.node()->grad.data() + i * k, k);
                                const S m = row.maxCoeff();
                                Array<S> e = (row - m).exp();
                                Array<S> p = e / e.sum();
                                g += p * scale;
                                g[(*ys)[static_cast<std::size_t>(i)]] -= scale;
                              }
                            });
}

}  // namespace rsd
