#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vtgan/blocks.hpp"
#include "vtgan/config.hpp"
#include "vtgan/discriminators.hpp"
#include "vtgan/gradcheck.hpp"
#include "vtgan/losses.hpp"
#include "vtgan/ops.hpp"
#include "vtgan/params.hpp"

namespace vtgan {

// ---------------------------------------------------------------------------
// The finite-difference battery behind `vtgan gradcheck`: every primitive op
// and every composite block, plus the whole desk-scale discriminator with
// dropout off. 64-bit only.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor<double> suite_rand(Shape shape, CounterRng& rng,
                                 bool requires_grad = false,
                                 double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scale * rng.next_normal();
  return Tensor<double>::from_data(std::move(shape), std::move(v),
                                   requires_grad);
}

/// Scalar projection of an op output against fixed random cotangents, so
/// every output coordinate contributes an asymmetric signal.
inline Tensor<double> project(const Tensor<double>& out,
                              const Tensor<double>& weights) {
  return sum_all(mul(out, weights));
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  using detail::project;
  using detail::suite_rand;
  std::vector<GradCheckResult> results;
  CounterRng rng(seed, "gradcheck.suite");
  auto add = [&](const std::string& name,
                 const std::function<Tensor<double>()>& f,
                 std::vector<Tensor<double>> params,
                 std::size_t coords = 8) {
    GradCheckOptions opts;
    opts.coords_per_tensor = coords;
    opts.seed = fold(seed, hash_str(name));
    results.push_back({name, gradient_check(f, params, opts)});
  };

  {
    auto x = suite_rand({2, 6, 6, 3}, rng, true);
    auto w = suite_rand({3, 3, 3, 4}, rng, true);
    auto b = suite_rand({4}, rng, true);
    auto r = suite_rand({2, 3, 3, 4}, rng);
    add("conv2d_s2",
        [=] {
          return project(conv2d(x, w, std::optional<Tensor<double>>(b), 2, 1,
                                Padding::same),
                         r);
        },
        {x, w, b});
  }
  {
    auto x = suite_rand({1, 7, 7, 2}, rng, true);
    auto w = suite_rand({3, 3, 2, 2}, rng, true);
    auto r = suite_rand({1, 3, 3, 2}, rng);
    add("conv2d_dilated",
        [=] {
          return project(conv2d(x, w, std::nullopt, 1, 2, Padding::valid), r);
        },
        {x, w});
  }
  {
    auto x = suite_rand({1, 6, 6, 3}, rng, true);
    auto w = suite_rand({3, 3, 3}, rng, true);
    auto r = suite_rand({1, 6, 6, 3}, rng);
    add("depthwise_conv2d",
        [=] {
          return project(depthwise_conv2d(x, w, 1, 1, Padding::same), r);
        },
        {x, w});
  }
  {
    auto x = suite_rand({1, 4, 4, 2}, rng, true);
    auto w = suite_rand({3, 3, 3, 2}, rng, true);
    auto b = suite_rand({3}, rng, true);
    auto r = suite_rand({1, 8, 8, 3}, rng);
    add("transposed_conv2d",
        [=] {
          return project(
              transposed_conv2d(x, w, std::optional<Tensor<double>>(b), 2), r);
        },
        {x, w, b});
  }
  {
    auto x = suite_rand({1, 6, 6, 3}, rng, true);
    auto dw = suite_rand({3, 3, 3}, rng, true);
    auto pw = suite_rand({1, 1, 3, 2}, rng, true);
    auto r = suite_rand({1, 6, 6, 2}, rng);
    add("separable_conv2d_d2",
        [=] {
          return project(separable_conv2d(x, dw, pw, std::nullopt, 1, 2,
                                          Padding::same),
                         r);
        },
        {x, dw, pw});
  }
  {
    auto x = suite_rand({5, 4}, rng, true);
    auto w = suite_rand({4, 3}, rng, true);
    auto b = suite_rand({3}, rng, true);
    auto r = suite_rand({5, 3}, rng);
    add("dense",
        [=] {
          return project(dense(x, w, std::optional<Tensor<double>>(b)), r);
        },
        {x, w, b});
  }
  {
    auto x = suite_rand({4, 6}, rng, true);
    auto r = suite_rand({4, 6}, rng);
    add("activations",
        [=] { return project(tanh_act(gelu(leaky_relu(x))), r); }, {x});
    add("softmax", [=] { return project(softmax(x, 1), r); }, {x});
  }
  {
    auto x = suite_rand({2, 3, 3, 2}, rng, true);
    auto gamma = suite_rand({2}, rng, true);
    auto beta = suite_rand({2}, rng, true);
    auto r = suite_rand({2, 3, 3, 2}, rng);
    add("batch_norm",
        [=] {
          auto rm = Tensor<double>::zeros({2});
          auto rv = Tensor<double>::full({2}, 1.0);
          return project(
              batch_norm(x, gamma, beta, rm, rv, Mode::training(0, 0)), r);
        },
        {x, gamma, beta});
  }
  {
    auto x = suite_rand({5, 6}, rng, true);
    auto gamma = suite_rand({6}, rng, true);
    auto beta = suite_rand({6}, rng, true);
    auto r = suite_rand({5, 6}, rng);
    add("layer_norm",
        [=] { return project(layer_norm(x, gamma, beta), r); },
        {x, gamma, beta});
  }
  {
    auto x = suite_rand({1, 4, 5, 2}, rng, true);
    auto r = suite_rand({1, 8, 9, 2}, rng);
    add("reflection_pad", [=] { return project(reflection_pad(x, 2), r); },
        {x});
  }
  {
    auto x = suite_rand({40}, rng, true);
    auto r = suite_rand({40}, rng);
    add("dropout",
        [=] {
          return project(dropout(x, 0.3, Mode::training(7, 3), "suite.drop"),
                         r);
        },
        {x});
  }
  {
    auto x = suite_rand({8, 8, 3}, rng, true);
    auto r = suite_rand({4, 48}, rng);
    add("patchify", [=] { return project(patchify_tokens(x, 4), r); }, {x});
  }
  {
    auto x = suite_rand({1, 4, 4, 2}, rng, true);
    auto r = suite_rand({1, 2, 2, 2}, rng);
    add("maxpool2d", [=] { return project(maxpool2d(x), r); }, {x});
  }

  // composite blocks
  auto store_params = [](ParameterStore<double>& ps,
                         std::vector<Tensor<double>> extra) {
    for (const auto& path : ps.paths())
      if (ps.kind(path) == ParamKind::weight) extra.push_back(ps.at(path));
    return extra;
  };
  {
    ParameterStore<double> ps(fold(seed, 1));
    build_downsampling(ps, "blk", 2, 4);
    auto x = suite_rand({2, 8, 8, 2}, rng, true);
    auto r = suite_rand({2, 4, 4, 4}, rng);
    add("downsampling_block",
        [&ps, x, r] {
          return project(downsampling_block(ps, "blk", x, Mode::training(0, 0)),
                         r);
        },
        store_params(ps, {x}));
  }
  {
    ParameterStore<double> ps(fold(seed, 2));
    build_upsampling(ps, "blk", 4, 2);
    auto x = suite_rand({2, 4, 4, 4}, rng, true);
    auto r = suite_rand({2, 8, 8, 2}, rng);
    add("upsampling_block",
        [&ps, x, r] {
          return project(upsampling_block(ps, "blk", x, Mode::training(0, 0)),
                         r);
        },
        store_params(ps, {x}));
  }
  {
    ParameterStore<double> ps(fold(seed, 3));
    build_sff(ps, "blk", 3);
    auto x = suite_rand({2, 5, 5, 3}, rng, true);
    auto r = suite_rand({2, 5, 5, 3}, rng);
    add("sff_block",
        [&ps, x, r] {
          return project(sff_block(ps, "blk", x, Mode::training(0, 0)), r);
        },
        store_params(ps, {x}));
  }
  {
    ParameterStore<double> ps(fold(seed, 4));
    build_residual(ps, "blk", 4);
    auto x = suite_rand({1, 8, 8, 4}, rng, true);
    auto r = suite_rand({1, 8, 8, 4}, rng);
    add("generator_residual_block",
        [&ps, x, r] {
          return project(generator_residual_block(ps, "blk", x, Mode::eval()),
                         r);
        },
        store_params(ps, {x}), 6);
  }
  {
    ParameterStore<double> ps(fold(seed, 5));
    build_attention(ps, "blk", 16);
    auto tokens = suite_rand({6, 16}, rng, true);
    auto r = suite_rand({6, 16}, rng);
    add("multi_head_attention",
        [&ps, tokens, r] {
          return project(multi_head_attention(ps, "blk", tokens, 4), r);
        },
        store_params(ps, {tokens}));
  }
  {
    BlockConfig enc;
    enc.latent_dim = 16;
    enc.heads = 4;
    enc.mlp_sizes = {32, 16};
    enc.dropout_rate = 0.0;  // dropout off for the check
    ParameterStore<double> ps(fold(seed, 6));
    build_encoder_block(ps, "blk", enc);
    auto tokens = suite_rand({6, 16}, rng, true);
    auto r = suite_rand({6, 16}, rng);
    add("transformer_encoder_block",
        [&ps, tokens, r, enc] {
          return project(
              transformer_encoder_block(ps, "blk", tokens, enc, Mode::eval()),
              r);
        },
        store_params(ps, {tokens}), 6);
  }
  {
    // whole desk-scale discriminator, dropout off:
    // scalar = mean(adv_map) + cce(labels, probs)
    GanConfig desk = GanConfig::preset("desk");
    desk.dropout = 0.0;
    VtConfig vt = desk.vt_config(true);
    ParameterStore<double> ps(fold(seed, 7));
    build_vt(ps, "vt", vt);
    CounterRng img_rng(fold(seed, 8), "suite.vt");
    std::vector<double> fv(64 * 64 * 3), av(64 * 64);
    for (auto& v : fv) v = 2.0 * img_rng.next_uniform() - 1.0;
    for (auto& v : av) v = 2.0 * img_rng.next_uniform() - 1.0;
    auto fundus = Tensor<double>::from_data({64, 64, 3}, std::move(fv));
    auto angio = Tensor<double>::from_data({64, 64, 1}, std::move(av));
    auto label = Tensor<double>::from_data({2}, {0.0, 1.0});
    add("vt_discriminator",
        [&ps, vt, fundus, angio, label] {
          auto out = vt_forward(ps, "vt", vt, fundus, angio, Mode::eval());
          return vtgan::add(mean_all(out.adv_map),
                            cce(label, out.class_probs));
        },
        store_params(ps, {}), 3);
  }
  return results;
}

}  // namespace vtgan
