#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "vtgan/core.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

// ---------------------------------------------------------------------------
// Central finite-difference verification of the reverse pass. Runs in 64-bit
// only; relative error is |analytic - numeric| / max(1, |analytic|, |numeric|)
// maximized over sampled coordinates of every checked tensor.
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t coords_per_tensor = 8;
  std::uint64_t seed = 7;
};

inline double gradient_check(const std::function<Tensor<double>()>& f,
                             const std::vector<Tensor<double>>& params,
                             const GradCheckOptions& opts = {}) {
  for (auto p : params) p.zero_grad();
  Tensor<double> loss = f();
  check<Error>(loss.size() == 1, "gradient_check needs a scalar function, got ",
               shape_str(loss.shape()));
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(p.size(), 0.0));

  CounterRng rng(opts.seed, "gradcheck.coords");
  auto probe = [&](Tensor<double> p, std::size_t idx, double eps) {
    double saved = p.mutable_data()[idx];
    p.mutable_data()[idx] = saved + eps;
    double up = f().item();
    p.mutable_data()[idx] = saved - eps;
    double down = f().item();
    p.mutable_data()[idx] = saved;
    return (up - down) / (2.0 * eps);
  };
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double> p = params[pi];
    std::size_t n = p.size();
    std::size_t m = std::min(n, opts.coords_per_tensor);
    for (std::size_t c = 0; c < m; ++c) {
      std::size_t idx = (n <= opts.coords_per_tensor)
                            ? c
                            : static_cast<std::size_t>(rng.next_below(n));
      double fd = probe(p, idx, opts.eps);
      double fd_half = probe(p, idx, opts.eps / 2.0);
      // A perturbation that straddles a kink (leaky-relu, hinge) makes the
      // numeric estimate itself invalid; the two step sizes disagree there,
      // so the coordinate is skipped rather than misreported.
      if (std::abs(fd - fd_half) /
              std::max({1.0, std::abs(fd), std::abs(fd_half)}) >
          1e-3)
        continue;
      double a = analytic[pi][idx];
      double rel = std::abs(a - fd_half) /
                   std::max({1.0, std::abs(a), std::abs(fd_half)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

struct GradCheckResult {
  std::string name;
  double max_rel_err;
};

}  // namespace vtgan
