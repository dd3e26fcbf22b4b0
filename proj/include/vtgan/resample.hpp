#pragma once

#include <cmath>
#include <vector>

#include "vtgan/core.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

namespace detail {

inline double lanczos3(double t) {
  t = std::abs(t);
  if (t >= 3.0) return 0.0;
  if (t < 1e-12) return 1.0;
  double pt = 3.141592653589793 * t;
  return 3.0 * std::sin(pt) * std::sin(pt / 3.0) / (pt * pt);
}

struct ResampleTap {
  std::size_t first;
  std::vector<double> weights;  // normalized to sum 1
};

/// Taps for one output coordinate when shrinking `in` -> `in / factor`.
inline ResampleTap lanczos_taps(std::size_t i, std::size_t in,
                                std::size_t factor) {
  double f = static_cast<double>(factor);
  double center = (static_cast<double>(i) + 0.5) * f - 0.5;
  auto lo = static_cast<std::ptrdiff_t>(std::ceil(center - 3.0 * f));
  auto hi = static_cast<std::ptrdiff_t>(std::floor(center + 3.0 * f));
  ResampleTap tap;
  std::ptrdiff_t clo = std::max<std::ptrdiff_t>(lo, 0);
  std::ptrdiff_t chi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(in) - 1);
  tap.first = static_cast<std::size_t>(clo);
  tap.weights.resize(static_cast<std::size_t>(chi - clo + 1));
  double sum = 0.0;
  for (std::ptrdiff_t j = clo; j <= chi; ++j) {
    double w = lanczos3((static_cast<double>(j) - center) / f);
    tap.weights[static_cast<std::size_t>(j - clo)] = w;
    sum += w;
  }
  for (auto& w : tap.weights) w /= sum;
  return tap;
}

}  // namespace detail

/// Lanczos-3 downscaling of an HWC or NHWC tensor by an integer factor.
/// Separable, weights normalized per tap (constant images stay constant).
/// Produces plain values; not part of the autodiff graph.
template <typename T>
Tensor<T> lanczos_resize(const Tensor<T>& image, std::size_t factor = 2) {
  check<Error>(factor >= 1, "lanczos_resize factor must be >= 1");
  check<Error>(!image.requires_grad(),
               "lanczos_resize is not differentiable; detach first");
  check<ShapeError>(image.rank() == 3 || image.rank() == 4,
                    "lanczos_resize expects HWC or NHWC, got ",
                    shape_str(image.shape()));
  if (factor == 1) return image.detach();
  bool batched = image.rank() == 4;
  std::size_t b = batched ? image.dim(0) : 1;
  std::size_t h = image.dim(batched ? 1 : 0);
  std::size_t w = image.dim(batched ? 2 : 1);
  std::size_t c = image.dim(batched ? 3 : 2);
  check<ShapeError>(h % factor == 0 && w % factor == 0, "dims ", h, "x", w,
                    " not divisible by resize factor ", factor);
  std::size_t oh = h / factor, ow = w / factor;

  std::vector<detail::ResampleTap> row_taps(oh), col_taps(ow);
  for (std::size_t i = 0; i < oh; ++i)
    row_taps[i] = detail::lanczos_taps(i, h, factor);
  for (std::size_t i = 0; i < ow; ++i)
    col_taps[i] = detail::lanczos_taps(i, w, factor);

  const auto& src = image.data();
  // Vertical pass: h x w -> oh x w, then horizontal: oh x w -> oh x ow.
  std::vector<T> mid(b * oh * w * c);
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t y = 0; y < oh; ++y) {
      const auto& tap = row_taps[y];
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t k = 0; k < tap.weights.size(); ++k)
            acc += tap.weights[k] *
                   static_cast<double>(
                       src[((bb * h + tap.first + k) * w + x) * c + ch]);
          mid[((bb * oh + y) * w + x) * c + ch] = static_cast<T>(acc);
        }
    }
  std::vector<T> out(b * oh * ow * c);
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const auto& tap = col_taps[x];
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t k = 0; k < tap.weights.size(); ++k)
            acc += tap.weights[k] *
                   static_cast<double>(
                       mid[((bb * oh + y) * w + tap.first + k) * c + ch]);
          out[((bb * oh + y) * ow + x) * c + ch] = static_cast<T>(acc);
        }
      }
  Shape shape = batched ? Shape{b, oh, ow, c} : Shape{oh, ow, c};
  return Tensor<T>::from_data(std::move(shape), std::move(out));
}

}  // namespace vtgan
