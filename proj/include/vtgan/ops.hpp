#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "vtgan/core.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

enum class Padding { same, valid };

namespace detail {

struct ConvGeom {
  std::size_t oh, ow;
  std::ptrdiff_t pad_top, pad_left;
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s,
                                std::size_t d, Padding pad) {
  std::size_t span = d * (k - 1) + 1;
  if (pad == Padding::same) return (in + s - 1) / s;
  check<ShapeError>(in >= span, "conv input extent ", in,
                    " smaller than effective kernel ", span);
  return (in - span) / s + 1;
}

inline std::ptrdiff_t pad_before(std::size_t in, std::size_t out,
                                 std::size_t k, std::size_t s, std::size_t d,
                                 Padding pad) {
  if (pad == Padding::valid) return 0;
  std::ptrdiff_t total = static_cast<std::ptrdiff_t>((out - 1) * s +
                                                     d * (k - 1) + 1) -
                         static_cast<std::ptrdiff_t>(in);
  if (total < 0) total = 0;
  return total / 2;
}

inline ConvGeom conv_geometry(std::size_t h, std::size_t w, std::size_t kh,
                              std::size_t kw, std::size_t s, std::size_t d,
                              Padding pad) {
  ConvGeom g;
  g.oh = conv_out_dim(h, kh, s, d, pad);
  g.ow = conv_out_dim(w, kw, s, d, pad);
  g.pad_top = pad_before(h, g.oh, kh, s, d, pad);
  g.pad_left = pad_before(w, g.ow, kw, s, d, pad);
  return g;
}

}  // namespace detail

// ------------------------------ convolution --------------------------------

/// 2-D convolution on NHWC input with HWIO weights [kh, kw, c_in, c_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<std::optional<Tensor<T>>>& bias, std::size_t stride,
                 std::size_t dilation, Padding padding) {
  check<ShapeError>(x.rank() == 4, "conv2d expects NHWC input, got ",
                    shape_str(x.shape()));
  check<ShapeError>(w.rank() == 4, "conv2d expects HWIO weight, got ",
                    shape_str(w.shape()));
  check<Error>(stride >= 1 && dilation >= 1, "conv2d stride/dilation >= 1");
  std::size_t b = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  std::size_t kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  check<ShapeError>(w.dim(2) == ci, "conv2d channel mismatch: input ",
                    shape_str(x.shape()), " vs weight ", shape_str(w.shape()));
  if (bias)
    check<ShapeError>(bias->shape() == Shape{co}, "conv2d bias shape ",
                      shape_str(bias->shape()), " != [", co, "]");

  auto g = detail::conv_geometry(h, wd, kh, kw, stride, dilation, padding);
  std::size_t oh = g.oh, ow = g.ow;
  std::vector<T> out(b * oh * ow * co, T(0));
  const auto& xd = x.data();
  const auto& wd_ = w.data();
  const T* bd = bias ? bias->data().data() : nullptr;

  auto run = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t idx = lo; idx < hi; ++idx) {
      std::size_t bb = idx / oh, yo = idx % oh;
      for (std::size_t xo = 0; xo < ow; ++xo) {
        T* orow = &out[((bb * oh + yo) * ow + xo) * co];
        if (bd)
          for (std::size_t c = 0; c < co; ++c) orow[c] = bd[c];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yo * stride) -
                              g.pad_top + static_cast<std::ptrdiff_t>(ky * dilation);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride) -
                                g.pad_left +
                                static_cast<std::ptrdiff_t>(kx * dilation);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            const T* xrow = &xd[((bb * h + iy) * wd + ix) * ci];
            const T* wrow = &wd_[(ky * kw + kx) * ci * co];
            for (std::size_t c = 0; c < ci; ++c) {
              T xv = xrow[c];
              if (xv == T(0)) continue;
              const T* wc = &wrow[c * co];
              for (std::size_t o = 0; o < co; ++o) orow[o] += xv * wc[o];
            }
          }
        }
      }
    }
  };
  parallel_for(b * oh, (oh * ow * ci * co * kh * kw > 1u << 18) ? 1 : b * oh,
               run);

  std::vector<Tensor<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  bool has_bias = bias.has_value();
  return make_op<T>(
      {b, oh, ow, co}, std::move(out), std::move(inputs),
      [=](TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto* gx = grad_buf(self, 0);
        auto* gw = grad_buf(self, 1);
        std::vector<T>* gb =
            has_bias ? grad_buf(self, 2) : nullptr;
        const auto& go = self.grad;
        for (std::size_t bb = 0; bb < b; ++bb)
          for (std::size_t yo = 0; yo < oh; ++yo)
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const T* grow = &go[((bb * oh + yo) * ow + xo) * co];
              if (gb)
                for (std::size_t c = 0; c < co; ++c) (*gb)[c] += grow[c];
              if (!gx && !gw) continue;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yo * stride) -
                                    g.pad_top +
                                    static_cast<std::ptrdiff_t>(ky * dilation);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(xo * stride) - g.pad_left +
                      static_cast<std::ptrdiff_t>(kx * dilation);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd))
                    continue;
                  std::size_t xoff = ((bb * h + iy) * wd + ix) * ci;
                  std::size_t woff = (ky * kw + kx) * ci * co;
                  for (std::size_t c = 0; c < ci; ++c) {
                    const T* wc = &pw.data[woff + c * co];
                    if (gx) {
                      T s = T(0);
                      for (std::size_t o = 0; o < co; ++o)
                        s += grow[o] * wc[o];
                      (*gx)[xoff + c] += s;
                    }
                    if (gw) {
                      T xv = px.data[xoff + c];
                      if (xv != T(0)) {
                        T* gwc = &(*gw)[woff + c * co];
                        for (std::size_t o = 0; o < co; ++o)
                          gwc[o] += xv * grow[o];
                      }
                    }
                  }
                }
              }
            }
      });
}

/// Depthwise 2-D convolution; weight [kh, kw, c] applies one filter per
/// input channel.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                           std::size_t stride, std::size_t dilation,
                           Padding padding) {
  check<ShapeError>(x.rank() == 4, "depthwise_conv2d expects NHWC input, got ",
                    shape_str(x.shape()));
  check<ShapeError>(w.rank() == 3, "depthwise_conv2d expects [kh,kw,c] weight, got ",
                    shape_str(w.shape()));
  std::size_t b = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  std::size_t kh = w.dim(0), kw = w.dim(1);
  check<ShapeError>(w.dim(2) == c, "depthwise channel mismatch: input ",
                    shape_str(x.shape()), " vs weight ", shape_str(w.shape()));
  auto g = detail::conv_geometry(h, wd, kh, kw, stride, dilation, padding);
  std::size_t oh = g.oh, ow = g.ow;
  std::vector<T> out(b * oh * ow * c, T(0));
  const auto& xd = x.data();
  const auto& wdat = w.data();
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t yo = 0; yo < oh; ++yo)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        T* orow = &out[((bb * oh + yo) * ow + xo) * c];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yo * stride) -
                              g.pad_top +
                              static_cast<std::ptrdiff_t>(ky * dilation);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride) -
                                g.pad_left +
                                static_cast<std::ptrdiff_t>(kx * dilation);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            const T* xrow = &xd[((bb * h + iy) * wd + ix) * c];
            const T* wrow = &wdat[(ky * kw + kx) * c];
            for (std::size_t cc = 0; cc < c; ++cc)
              orow[cc] += xrow[cc] * wrow[cc];
          }
        }
      }
  return make_op<T>(
      {b, oh, ow, c}, std::move(out), {x, w}, [=](TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto* gx = grad_buf(self, 0);
        auto* gw = grad_buf(self, 1);
        const auto& go = self.grad;
        for (std::size_t bb = 0; bb < b; ++bb)
          for (std::size_t yo = 0; yo < oh; ++yo)
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const T* grow = &go[((bb * oh + yo) * ow + xo) * c];
              for (std::size_t ky = 0; ky < kh; ++ky) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yo * stride) -
                                    g.pad_top +
                                    static_cast<std::ptrdiff_t>(ky * dilation);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(xo * stride) - g.pad_left +
                      static_cast<std::ptrdiff_t>(kx * dilation);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd))
                    continue;
                  std::size_t xoff = ((bb * h + iy) * wd + ix) * c;
                  std::size_t woff = (ky * kw + kx) * c;
                  for (std::size_t cc = 0; cc < c; ++cc) {
                    if (gx) (*gx)[xoff + cc] += grow[cc] * pw.data[woff + cc];
                    if (gw) (*gw)[woff + cc] += grow[cc] * px.data[xoff + cc];
                  }
                }
              }
            }
      });
}

/// Transposed convolution, defined as the exact adjoint of conv2d with
/// "same" padding at the given stride. Weight is [kh, kw, c_out, c_in];
/// output spatial extent is input extent times stride.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                            const std::type_identity_t<std::optional<Tensor<T>>>& bias,
                            std::size_t stride) {
  check<ShapeError>(x.rank() == 4, "transposed_conv2d expects NHWC input, got ",
                    shape_str(x.shape()));
  check<ShapeError>(w.rank() == 4,
                    "transposed_conv2d expects [kh,kw,c_out,c_in] weight, got ",
                    shape_str(w.shape()));
  std::size_t b = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  std::size_t kh = w.dim(0), kw = w.dim(1), co = w.dim(2);
  check<ShapeError>(w.dim(3) == ci, "transposed_conv2d channel mismatch: input ",
                    shape_str(x.shape()), " vs weight ", shape_str(w.shape()));
  check<Error>(stride >= 1, "transposed_conv2d stride >= 1");
  check<ShapeError>(kh >= stride && kw >= stride,
                    "transposed_conv2d kernel ", kh, "x", kw,
                    " cannot cover stride ", stride, " output");
  if (bias)
    check<ShapeError>(bias->shape() == Shape{co}, "transposed_conv2d bias shape ",
                      shape_str(bias->shape()), " != [", co, "]");

  std::size_t oh = h * stride, ow = wd * stride;
  // Padding of the conv this op is the adjoint of.
  std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(kh - stride) / 2;
  std::ptrdiff_t pl = static_cast<std::ptrdiff_t>(kw - stride) / 2;

  std::vector<T> out(b * oh * ow * co, T(0));
  const auto& xd = x.data();
  const auto& wdat = w.data();
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t ys = 0; ys < h; ++ys)
      for (std::size_t xs = 0; xs < wd; ++xs) {
        const T* xrow = &xd[((bb * h + ys) * wd + xs) * ci];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(ys * stride) - pt +
              static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(oh)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xs * stride) - pl +
                                static_cast<std::ptrdiff_t>(kx);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(ow)) continue;
            T* orow = &out[((bb * oh + iy) * ow + ix) * co];
            const T* wrow = &wdat[(ky * kw + kx) * co * ci];
            for (std::size_t o = 0; o < co; ++o) {
              T s = T(0);
              const T* wc = &wrow[o * ci];
              for (std::size_t c = 0; c < ci; ++c) s += xrow[c] * wc[c];
              orow[o] += s;
            }
          }
        }
      }
  if (bias) {
    const auto& bd = bias->data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % co];
  }

  std::vector<Tensor<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  bool has_bias = bias.has_value();
  return make_op<T>(
      {b, oh, ow, co}, std::move(out), std::move(inputs),
      [=](TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto* gx = grad_buf(self, 0);
        auto* gw = grad_buf(self, 1);
        std::vector<T>* gb =
            has_bias ? grad_buf(self, 2) : nullptr;
        const auto& go = self.grad;
        if (gb)
          for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i % co] += go[i];
        for (std::size_t bb = 0; bb < b; ++bb)
          for (std::size_t ys = 0; ys < h; ++ys)
            for (std::size_t xs = 0; xs < wd; ++xs) {
              std::size_t xoff = ((bb * h + ys) * wd + xs) * ci;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(ys * stride) -
                                    pt + static_cast<std::ptrdiff_t>(ky);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(oh)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(xs * stride) - pl +
                      static_cast<std::ptrdiff_t>(kx);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(ow))
                    continue;
                  const T* grow = &go[((bb * oh + iy) * ow + ix) * co];
                  const std::size_t woff = (ky * kw + kx) * co * ci;
                  for (std::size_t o = 0; o < co; ++o) {
                    const T* wc = &pw.data[woff + o * ci];
                    T gv = grow[o];
                    if (gv == T(0)) continue;
                    for (std::size_t c = 0; c < ci; ++c) {
                      if (gx) (*gx)[xoff + c] += gv * wc[c];
                      if (gw) (*gw)[woff + o * ci + c] += gv * px.data[xoff + c];
                    }
                  }
                }
              }
            }
      });
}

/// Depthwise conv followed by a 1x1 pointwise conv; by construction it is
/// bit-identical to running the two constituents separately.
template <typename T>
Tensor<T> separable_conv2d(const Tensor<T>& x, const Tensor<T>& depthwise_w,
                           const Tensor<T>& pointwise_w,
                           const std::type_identity_t<std::optional<Tensor<T>>>& bias,
                           std::size_t stride, std::size_t dilation,
                           Padding padding) {
  check<ShapeError>(pointwise_w.rank() == 4 && pointwise_w.dim(0) == 1 &&
                        pointwise_w.dim(1) == 1,
                    "separable_conv2d pointwise weight must be 1x1, got ",
                    shape_str(pointwise_w.shape()));
  Tensor<T> mid = depthwise_conv2d(x, depthwise_w, stride, dilation, padding);
  return conv2d(mid, pointwise_w, bias, 1, 1, Padding::same);
}

// -------------------------------- dense ------------------------------------

/// Affine map over the last axis; leading axes broadcast.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w,
                const std::type_identity_t<std::optional<Tensor<T>>>& bias) {
  check<ShapeError>(x.rank() >= 1 && w.rank() == 2, "dense expects weight [k,n]");
  std::size_t k = x.dim(x.rank() - 1);
  check<ShapeError>(w.dim(0) == k, "dense dim mismatch: input ",
                    shape_str(x.shape()), " vs weight ", shape_str(w.shape()));
  std::size_t n = w.dim(1);
  std::size_t m = x.size() / k;
  if (bias)
    check<ShapeError>(bias->shape() == Shape{n}, "dense bias shape ",
                      shape_str(bias->shape()), " != [", n, "]");
  const auto& xd = x.data();
  const auto& wd = w.data();
  const T* bd = bias ? bias->data().data() : nullptr;
  std::vector<T> out(m * n, T(0));
  parallel_for(m, (m * n * k > 1u << 20) ? 1 : m,
               [&](std::size_t lo, std::size_t hi) {
                 for (std::size_t i = lo; i < hi; ++i) {
                   T* orow = &out[i * n];
                   if (bd)
                     for (std::size_t j = 0; j < n; ++j) orow[j] = bd[j];
                   const T* xrow = &xd[i * k];
                   for (std::size_t kk = 0; kk < k; ++kk) {
                     T xv = xrow[kk];
                     if (xv == T(0)) continue;
                     const T* wrow = &wd[kk * n];
                     for (std::size_t j = 0; j < n; ++j)
                       orow[j] += xv * wrow[j];
                   }
                 }
               });
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<Tensor<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  bool has_bias = bias.has_value();
  return make_op<T>(
      std::move(out_shape), std::move(out), std::move(inputs),
      [m, n, k, has_bias](TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const auto& go = self.grad;
        if (has_bias)
          if (auto* gb = grad_buf(self, 2))
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) (*gb)[j] += go[i * n + j];
        if (auto* gx = grad_buf(self, 0))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              T s = T(0);
              const T* wrow = &pw.data[kk * n];
              const T* grow = &go[i * n];
              for (std::size_t j = 0; j < n; ++j) s += grow[j] * wrow[j];
              (*gx)[i * k + kk] += s;
            }
        if (auto* gw = grad_buf(self, 1))
          for (std::size_t i = 0; i < m; ++i) {
            const T* xrow = &px.data[i * k];
            const T* grow = &go[i * n];
            for (std::size_t kk = 0; kk < k; ++kk) {
              T xv = xrow[kk];
              if (xv == T(0)) continue;
              T* gwrow = &(*gw)[kk * n];
              for (std::size_t j = 0; j < n; ++j) gwrow[j] += xv * grow[j];
            }
          }
      });
}

// ------------------------------ activations --------------------------------

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  std::vector<T> out(x.size());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xd[i] > T(0) ? xd[i] : slope * xd[i];
  return make_op<T>(x.shape(), std::move(out), {x},
                    [slope](TensorImpl<T>& self) {
                      auto& p = *self.parents[0];
                      if (auto* g = grad_buf(self, 0))
                        for (std::size_t i = 0; i < g->size(); ++i)
                          (*g)[i] += self.grad[i] *
                                     (p.data[i] > T(0) ? T(1) : slope);
                    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double inv_sqrt2 = 0.7071067811865476;
  std::vector<T> out(x.size());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(xd[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [](TensorImpl<T>& self) {
    constexpr double inv_sqrt2 = 0.7071067811865476;
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    auto& p = *self.parents[0];
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        double v = static_cast<double>(p.data[i]);
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        (*g)[i] += self.grad[i] * static_cast<T>(cdf + v * pdf);
      }
  });
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  return make_op<T>(x.shape(), std::move(out), {x}, [](TensorImpl<T>& self) {
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        T y = self.data[i];
        (*g)[i] += self.grad[i] * (T(1) - y * y);
      }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  check<ShapeError>(axis < x.rank(), "softmax axis ", axis,
                    " out of range for ", shape_str(x.shape()));
  std::size_t outer, mid, inner;
  detail::axis_split(x.shape(), axis, outer, mid, inner);
  std::vector<T> out(x.size());
  const auto& xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      T mx = xd[o * mid * inner + in];
      for (std::size_t m = 1; m < mid; ++m)
        mx = std::max(mx, xd[(o * mid + m) * inner + in]);
      T sum = T(0);
      for (std::size_t m = 0; m < mid; ++m) {
        T e = std::exp(xd[(o * mid + m) * inner + in] - mx);
        out[(o * mid + m) * inner + in] = e;
        sum += e;
      }
      for (std::size_t m = 0; m < mid; ++m)
        out[(o * mid + m) * inner + in] /= sum;
    }
  return make_op<T>(
      x.shape(), std::move(out), {x},
      [outer, mid, inner](TensorImpl<T>& self) {
        if (auto* g = grad_buf(self, 0))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
              T dot = T(0);
              for (std::size_t m = 0; m < mid; ++m) {
                std::size_t i = (o * mid + m) * inner + in;
                dot += self.grad[i] * self.data[i];
              }
              for (std::size_t m = 0; m < mid; ++m) {
                std::size_t i = (o * mid + m) * inner + in;
                (*g)[i] += self.data[i] * (self.grad[i] - dot);
              }
            }
      });
}

enum class Activation { leaky_relu, gelu, tanh, softmax };

inline Activation activation_from_string(const std::string& s) {
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "gelu") return Activation::gelu;
  if (s == "tanh") return Activation::tanh;
  if (s == "softmax") return Activation::softmax;
  throw Error("unknown activation kind: " + s);
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x,
                     std::optional<std::size_t> axis = std::nullopt) {
  switch (kind) {
    case Activation::leaky_relu:
      return leaky_relu(x);
    case Activation::gelu:
      return gelu(x);
    case Activation::tanh:
      return tanh_act(x);
    case Activation::softmax:
      check<Error>(axis.has_value(), "softmax requires an axis");
      return softmax(x, *axis);
  }
  throw Error("unknown activation kind");
}

// ------------------------------ normalization ------------------------------

/// Batch normalization over (N, H, W) per channel of an NHWC tensor.
/// Train mode uses batch statistics and updates the running buffers in
/// place; eval mode reads the running buffers.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, const Mode& mode,
                     T momentum = T(0.9), T eps = T(1e-5)) {
  check<ShapeError>(x.rank() == 4, "batch_norm expects NHWC input, got ",
                    shape_str(x.shape()));
  std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check<ShapeError>(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                    "batch_norm gamma/beta must be [", c, "]");
  const auto& xd = x.data();
  std::size_t m = b * h * w;

  std::vector<T> mean(c), var(c);
  if (mode.train) {
    check<NumericError>(b >= 2,
                        "batch_norm train mode requires batch >= 2, got ", b);
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t cc = 0; cc < c; ++cc) mean[cc] += xd[i * c + cc];
    for (std::size_t cc = 0; cc < c; ++cc) mean[cc] /= static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t cc = 0; cc < c; ++cc) {
        T d = xd[i * c + cc] - mean[cc];
        var[cc] += d * d;
      }
    for (std::size_t cc = 0; cc < c; ++cc) var[cc] /= static_cast<T>(m);
    auto& rm = running_mean.mutable_data();
    auto& rv = running_var.mutable_data();
    for (std::size_t cc = 0; cc < c; ++cc) {
      rm[cc] = momentum * rm[cc] + (T(1) - momentum) * mean[cc];
      rv[cc] = momentum * rv[cc] + (T(1) - momentum) * var[cc];
    }
  } else {
    mean = running_mean.data();
    var = running_var.data();
  }

  std::vector<T> inv_std(c);
  for (std::size_t cc = 0; cc < c; ++cc)
    inv_std[cc] = T(1) / std::sqrt(var[cc] + eps);
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t cc = 0; cc < c; ++cc)
      out[i * c + cc] =
          gd[cc] * (xd[i * c + cc] - mean[cc]) * inv_std[cc] + bd[cc];

  bool train = mode.train;
  return make_op<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [m, c, mean, inv_std, train](TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        const auto& go = self.grad;
        const auto& gd = pg.data;
        // Per-channel reductions shared by all three gradients.
        std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t cc = 0; cc < c; ++cc) {
            T xhat = (px.data[i * c + cc] - mean[cc]) * inv_std[cc];
            sum_dy[cc] += go[i * c + cc];
            sum_dy_xhat[cc] += go[i * c + cc] * xhat;
          }
        if (auto* gg = grad_buf(self, 1))
          for (std::size_t cc = 0; cc < c; ++cc) (*gg)[cc] += sum_dy_xhat[cc];
        if (auto* gb = grad_buf(self, 2))
          for (std::size_t cc = 0; cc < c; ++cc) (*gb)[cc] += sum_dy[cc];
        if (auto* gx = grad_buf(self, 0)) {
          T inv_m = T(1) / static_cast<T>(m);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t cc = 0; cc < c; ++cc) {
              std::size_t idx = i * c + cc;
              if (train) {
                T xhat = (px.data[idx] - mean[cc]) * inv_std[cc];
                (*gx)[idx] += gd[cc] * inv_std[cc] *
                              (go[idx] - inv_m * sum_dy[cc] -
                               xhat * inv_m * sum_dy_xhat[cc]);
              } else {
                (*gx)[idx] += gd[cc] * inv_std[cc] * go[idx];
              }
            }
        }
      });
}

/// Layer normalization over the last axis with per-position statistics.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  check<ShapeError>(x.rank() >= 1, "layer_norm needs rank >= 1");
  std::size_t d = x.dim(x.rank() - 1);
  check<ShapeError>(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
                    "layer_norm gamma/beta must be [", d, "]");
  std::size_t rows = x.size() / d;
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  std::vector<T> out(x.size()), mean(rows), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = &xd[r * d];
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T v = T(0);
    for (std::size_t j = 0; j < d; ++j) v += (row[j] - mu) * (row[j] - mu);
    v /= static_cast<T>(d);
    mean[r] = mu;
    inv_std[r] = T(1) / std::sqrt(v + eps);
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = gd[j] * (row[j] - mu) * inv_std[r] + bd[j];
  }
  return make_op<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, mean, inv_std](TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        const auto& go = self.grad;
        auto* gx = grad_buf(self, 0);
        auto* gg = grad_buf(self, 1);
        auto* gb = grad_buf(self, 2);
        T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = &px.data[r * d];
          const T* grow = &go[r * d];
          T sum_dyg = T(0), sum_dyg_xhat = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            T xhat = (row[j] - mean[r]) * inv_std[r];
            T dyg = grow[j] * pg.data[j];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            if (gg) (*gg)[j] += grow[j] * xhat;
            if (gb) (*gb)[j] += grow[j];
          }
          if (gx)
            for (std::size_t j = 0; j < d; ++j) {
              T xhat = (row[j] - mean[r]) * inv_std[r];
              (*gx)[r * d + j] +=
                  inv_std[r] * (grow[j] * pg.data[j] - inv_d * sum_dyg -
                                xhat * inv_d * sum_dyg_xhat);
            }
        }
      });
}

// -------------------------------- dropout ----------------------------------

/// Inverted dropout. The mask is a pure function of (seed, layer, step), so
/// training runs replay bit-identically.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, const Mode& mode,
                  const std::string& layer) {
  check<Error>(rate >= T(0) && rate < T(1), "dropout rate must be in [0,1), got ",
               rate);
  if (!mode.train || rate == T(0)) return x;
  CounterRng rng(fold(fold(mode.seed, hash_str(layer)), mode.step));
  std::vector<unsigned char> keep(x.size());
  for (auto& k : keep) k = rng.next_uniform() >= static_cast<double>(rate);
  T scale = T(1) / (T(1) - rate);
  std::vector<T> out(x.size());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = keep[i] ? xd[i] * scale : T(0);
  return make_op<T>(x.shape(), std::move(out), {x},
                    [keep = std::move(keep), scale](TensorImpl<T>& self) {
                      if (auto* g = grad_buf(self, 0))
                        for (std::size_t i = 0; i < g->size(); ++i)
                          if (keep[i]) (*g)[i] += self.grad[i] * scale;
                    });
}

/// 2x2 stride-2 max pooling on NHWC input; ties route the gradient to the
/// first maximal element.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  check<ShapeError>(x.rank() == 4, "maxpool2d expects NHWC input, got ",
                    shape_str(x.shape()));
  std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check<ShapeError>(h % 2 == 0 && w % 2 == 0, "maxpool2d needs even dims, got ",
                    h, "x", w);
  std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(b * oh * ow * c);
  std::vector<std::uint32_t> argmax(out.size());
  const auto& xd = x.data();
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo)
        for (std::size_t cc = 0; cc < c; ++cc) {
          std::size_t best = ((bb * h + 2 * y) * w + 2 * xo) * c + cc;
          T bv = xd[best];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              std::size_t i =
                  ((bb * h + 2 * y + dy) * w + 2 * xo + dx) * c + cc;
              if (xd[i] > bv) {
                bv = xd[i];
                best = i;
              }
            }
          std::size_t o = ((bb * oh + y) * ow + xo) * c + cc;
          out[o] = bv;
          argmax[o] = static_cast<std::uint32_t>(best);
        }
  return make_op<T>({b, oh, ow, c}, std::move(out), {x},
                    [argmax = std::move(argmax)](TensorImpl<T>& self) {
                      if (auto* g = grad_buf(self, 0))
                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                          (*g)[argmax[i]] += self.grad[i];
                    });
}

// ------------------------------- padding -----------------------------------

/// Mirror-pads the spatial dims of an NHWC tensor; the border pixel is not
/// repeated ([1,2,3] pad 1 -> [2,1,2,3,2]).
template <typename T>
Tensor<T> reflection_pad(const Tensor<T>& x, std::size_t pad) {
  check<ShapeError>(x.rank() == 4, "reflection_pad expects NHWC input, got ",
                    shape_str(x.shape()));
  if (pad == 0) return x;
  std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check<ShapeError>(pad < h && pad < w, "reflection pad ", pad,
                    " too large for spatial dims ", h, "x", w);
  std::size_t oh = h + 2 * pad, ow = w + 2 * pad;
  auto reflect = [pad](std::size_t o, std::size_t n) {
    std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o) -
                       static_cast<std::ptrdiff_t>(pad);
    if (i < 0) i = -i;
    if (i >= static_cast<std::ptrdiff_t>(n))
      i = 2 * static_cast<std::ptrdiff_t>(n) - 2 - i;
    return static_cast<std::size_t>(i);
  };
  std::vector<T> out(b * oh * ow * c);
  const auto& xd = x.data();
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t yo = 0; yo < oh; ++yo) {
      std::size_t iy = reflect(yo, h);
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t ix = reflect(xo, w);
        std::copy_n(&xd[((bb * h + iy) * w + ix) * c], c,
                    &out[((bb * oh + yo) * ow + xo) * c]);
      }
    }
  return make_op<T>(
      {b, oh, ow, c}, std::move(out), {x},
      [b, h, w, c, oh, ow, reflect](TensorImpl<T>& self) {
        if (auto* g = grad_buf(self, 0))
          for (std::size_t bb = 0; bb < b; ++bb)
            for (std::size_t yo = 0; yo < oh; ++yo) {
              std::size_t iy = reflect(yo, h);
              for (std::size_t xo = 0; xo < ow; ++xo) {
                std::size_t ix = reflect(xo, w);
                const T* src = &self.grad[((bb * oh + yo) * ow + xo) * c];
                T* dst = &(*g)[((bb * h + iy) * w + ix) * c];
                for (std::size_t cc = 0; cc < c; ++cc) dst[cc] += src[cc];
              }
            }
      });
}

// ------------------------------- patching ----------------------------------

/// Cuts an H x W x C image into non-overlapping patch x patch tiles in
/// row-major order; each tile is flattened to patch*patch*C values.
template <typename T>
Tensor<T> patchify_tokens(const Tensor<T>& image, std::size_t patch) {
  check<ShapeError>(image.rank() == 3, "patchify expects HWC image, got ",
                    shape_str(image.shape()));
  std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  check<ShapeError>(h % patch == 0 && w % patch == 0, "image ", h, "x", w,
                    " not divisible by patch ", patch);
  std::size_t rows = h / patch, cols = w / patch;
  std::size_t t = rows * cols, len = patch * patch * c;
  std::vector<T> out(t * len);
  const auto& xd = image.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t cc = 0; cc < cols; ++cc)
      for (std::size_t py = 0; py < patch; ++py)
        std::copy_n(&xd[((r * patch + py) * w + cc * patch) * c], patch * c,
                    &out[(r * cols + cc) * len + py * patch * c]);
  return make_op<T>(
      {t, len}, std::move(out), {image},
      [rows, cols, patch, w, c, len](TensorImpl<T>& self) {
        if (auto* g = grad_buf(self, 0))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t cc = 0; cc < cols; ++cc)
              for (std::size_t py = 0; py < patch; ++py) {
                const T* src = &self.grad[(r * cols + cc) * len +
                                          py * patch * c];
                T* dst = &(*g)[((r * patch + py) * w + cc * patch) * c];
                for (std::size_t i = 0; i < patch * c; ++i) dst[i] += src[i];
              }
      });
}

/// Inverse of patchify_tokens.
template <typename T>
Tensor<T> unpatchify_tokens(const Tensor<T>& tokens, std::size_t patch,
                            std::size_t h, std::size_t w, std::size_t c) {
  std::size_t rows = h / patch, cols = w / patch;
  std::size_t len = patch * patch * c;
  check<ShapeError>(tokens.rank() == 2 && tokens.dim(0) == rows * cols &&
                        tokens.dim(1) == len,
                    "unpatchify: tokens ", shape_str(tokens.shape()),
                    " do not match ", h, "x", w, "x", c, " patch ", patch);
  std::vector<T> out(h * w * c);
  const auto& td = tokens.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t cc = 0; cc < cols; ++cc)
      for (std::size_t py = 0; py < patch; ++py)
        std::copy_n(&td[(r * cols + cc) * len + py * patch * c], patch * c,
                    &out[((r * patch + py) * w + cc * patch) * c]);
  return make_op<T>(
      {h, w, c}, std::move(out), {tokens},
      [rows, cols, patch, w, c, len](TensorImpl<T>& self) {
        if (auto* g = grad_buf(self, 0))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t cc = 0; cc < cols; ++cc)
              for (std::size_t py = 0; py < patch; ++py) {
                const T* src = &self.grad[((r * patch + py) * w +
                                           cc * patch) * c];
                T* dst = &(*g)[(r * cols + cc) * len + py * patch * c];
                for (std::size_t i = 0; i < patch * c; ++i) dst[i] += src[i];
              }
      });
}

}  // namespace vtgan
