#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vtgan/core.hpp"
#include "vtgan/ops.hpp"
#include "vtgan/params.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

/// Hyperparameters shared by the composite blocks.
struct BlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::vector<std::size_t> dilations{1, 2};
  std::size_t latent_dim = 64;
  std::size_t heads = 4;
  std::vector<std::size_t> mlp_sizes{128, 64};
  double dropout_rate = 0.1;

  void validate() const {
    check<Error>(heads >= 1 && latent_dim % heads == 0, "latent dim ",
                 latent_dim, " not divisible by ", heads, " heads");
    check<Error>(mlp_sizes.size() == 2 && mlp_sizes.back() == latent_dim,
                 "mlp sizes must end at the latent dim");
  }
};

// ----------------------------- batch-norm unit -----------------------------

template <typename T>
void build_bn(ParameterStore<T>& ps, const std::string& p, std::size_t c) {
  ps.create(p + ".gamma", {c}, Init::ones);
  ps.create(p + ".beta", {c}, Init::zeros);
  ps.create(p + ".mean", {c}, Init::zeros, ParamKind::state);
  ps.create(p + ".var", {c}, Init::ones, ParamKind::state);
}

template <typename T>
Tensor<T> bn_forward(ParameterStore<T>& ps, const std::string& p,
                     const Tensor<T>& x, const Mode& mode) {
  return batch_norm(x, ps.at(p + ".gamma"), ps.at(p + ".beta"),
                    ps.at(p + ".mean"), ps.at(p + ".var"), mode);
}

// --------------------------- down/up sampling ------------------------------

template <typename T>
void build_downsampling(ParameterStore<T>& ps, const std::string& p,
                        std::size_t cin, std::size_t cout) {
  ps.create(p + ".conv.w", {3, 3, cin, cout}, Init::normal_002);
  build_bn(ps, p + ".bn", cout);
}

/// conv(k=3, s=2, same) -> batch-norm -> leaky-relu; halves spatial dims.
template <typename T>
Tensor<T> downsampling_block(ParameterStore<T>& ps, const std::string& p,
                             const Tensor<T>& x, const Mode& mode) {
  auto y = conv2d(x, ps.at(p + ".conv.w"), std::nullopt, 2, 1, Padding::same);
  return leaky_relu(bn_forward(ps, p + ".bn", y, mode));
}

template <typename T>
void build_upsampling(ParameterStore<T>& ps, const std::string& p,
                      std::size_t cin, std::size_t cout) {
  ps.create(p + ".deconv.w", {3, 3, cout, cin}, Init::normal_002);
  build_bn(ps, p + ".bn", cout);
}

/// transposed conv(k=3, s=2) -> batch-norm -> leaky-relu; doubles dims.
template <typename T>
Tensor<T> upsampling_block(ParameterStore<T>& ps, const std::string& p,
                           const Tensor<T>& x, const Mode& mode) {
  auto y = transposed_conv2d(x, ps.at(p + ".deconv.w"), std::nullopt, 2);
  return leaky_relu(bn_forward(ps, p + ".bn", y, mode));
}

// ------------------------- spatial feature fusion --------------------------

template <typename T>
void build_sff(ParameterStore<T>& ps, const std::string& p, std::size_t c) {
  ps.create(p + ".unit1.conv.w", {3, 3, c, c}, Init::normal_002);
  build_bn(ps, p + ".unit1.bn", c);
  ps.create(p + ".unit2.conv.w", {3, 3, c, c}, Init::normal_002);
  build_bn(ps, p + ".unit2.bn", c);
}

/// Two conv/BN/leaky-relu units with skips from the input to each unit's
/// output; k=3, s=1, shape preserved.
template <typename T>
Tensor<T> sff_block(ParameterStore<T>& ps, const std::string& p,
                    const Tensor<T>& x, const Mode& mode) {
  auto cbl = [&](const std::string& unit, const Tensor<T>& in) {
    auto y = conv2d(in, ps.at(p + "." + unit + ".conv.w"), std::nullopt, 1, 1,
                    Padding::same);
    return leaky_relu(bn_forward(ps, p + "." + unit + ".bn", y, mode));
  };
  auto s1 = add(x, cbl("unit1", x));
  return add(x, cbl("unit2", s1));
}

// --------------------------- generator residual ----------------------------

template <typename T>
void build_sepconv_unit(ParameterStore<T>& ps, const std::string& p,
                        std::size_t c) {
  ps.create(p + ".sepconv.dw", {3, 3, c}, Init::normal_002);
  ps.create(p + ".sepconv.pw", {1, 1, c, c}, Init::normal_002);
  build_bn(ps, p + ".bn", c);
}

template <typename T>
void build_residual(ParameterStore<T>& ps, const std::string& p,
                    std::size_t c) {
  build_sepconv_unit(ps, p + ".stem", c);
  build_sepconv_unit(ps, p + ".branch_d1", c);
  build_sepconv_unit(ps, p + ".branch_d2", c);
}

/// Reflection-pad -> separable conv -> BN -> leaky-relu stem, then the same
/// unit on two parallel branches at dilation 1 and 2; output is
/// branch_d1 + branch_d2 + input skip. Channels and shape preserved.
template <typename T>
Tensor<T> generator_residual_block(ParameterStore<T>& ps, const std::string& p,
                                   const Tensor<T>& x, const Mode& mode) {
  auto unit = [&](const std::string& name, const Tensor<T>& in,
                  std::size_t dilation) {
    auto y = reflection_pad(in, dilation);
    y = separable_conv2d(y, ps.at(p + "." + name + ".sepconv.dw"),
                         ps.at(p + "." + name + ".sepconv.pw"), std::nullopt,
                         1, dilation, Padding::valid);
    return leaky_relu(bn_forward(ps, p + "." + name + ".bn", y, mode));
  };
  auto stem = unit("stem", x, 1);
  auto b1 = unit("branch_d1", stem, 1);
  auto b2 = unit("branch_d2", stem, 2);
  return add(add(b1, b2), x);
}

// -------------------------- multi-head attention ---------------------------

template <typename T>
void build_attention(ParameterStore<T>& ps, const std::string& p,
                     std::size_t d) {
  for (const char* name : {"wq", "wk", "wv", "wo"})
    ps.create(p + "." + name, {d, d}, Init::normal_002);
  for (const char* name : {"bq", "bk", "bv", "bo"})
    ps.create(p + "." + name, {d}, Init::zeros);
}

/// Scaled dot-product attention over a T x D token matrix, n heads of
/// width D/n, concatenated and projected back to D.
template <typename T>
Tensor<T> multi_head_attention(ParameterStore<T>& ps, const std::string& p,
                               const Tensor<T>& tokens, std::size_t n_heads) {
  check<ShapeError>(tokens.rank() == 2, "attention expects TxD tokens, got ",
                    shape_str(tokens.shape()));
  std::size_t d = tokens.dim(1);
  check<Error>(n_heads >= 1 && d % n_heads == 0, "token dim ", d,
               " not divisible by ", n_heads, " heads");
  std::size_t dh = d / n_heads;
  auto q = dense(tokens, ps.at(p + ".wq"), std::optional<Tensor<T>>(ps.at(p + ".bq")));
  auto k = dense(tokens, ps.at(p + ".wk"), std::optional<Tensor<T>>(ps.at(p + ".bk")));
  auto v = dense(tokens, ps.at(p + ".wv"), std::optional<Tensor<T>>(ps.at(p + ".bv")));
  T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto qh = slice(q, 1, h * dh, dh);
    auto kh = slice(k, 1, h * dh, dh);
    auto vh = slice(v, 1, h * dh, dh);
    auto scores = mul_scalar(matmul(qh, kh, false, true), scale);
    auto attn = softmax(scores, 1);
    heads.push_back(matmul(attn, vh));
  }
  auto ctx = n_heads == 1 ? heads[0] : concat(heads, 1);
  return dense(ctx, ps.at(p + ".wo"), std::optional<Tensor<T>>(ps.at(p + ".bo")));
}

/// Per-query attention weights (forward only), for invariant checks.
template <typename T>
std::vector<Tensor<T>> attention_weights(ParameterStore<T>& ps,
                                         const std::string& p,
                                         const Tensor<T>& tokens,
                                         std::size_t n_heads) {
  NoGradGuard ng;
  std::size_t d = tokens.dim(1), dh = d / n_heads;
  auto q = dense(tokens, ps.at(p + ".wq"), std::optional<Tensor<T>>(ps.at(p + ".bq")));
  auto k = dense(tokens, ps.at(p + ".wk"), std::optional<Tensor<T>>(ps.at(p + ".bk")));
  T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> out;
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto qh = slice(q, 1, h * dh, dh);
    auto kh = slice(k, 1, h * dh, dh);
    out.push_back(softmax(mul_scalar(matmul(qh, kh, false, true), scale), 1));
  }
  return out;
}

// -------------------------- transformer encoder ----------------------------

template <typename T>
void build_encoder_block(ParameterStore<T>& ps, const std::string& p,
                         const BlockConfig& cfg) {
  cfg.validate();
  std::size_t d = cfg.latent_dim;
  ps.create(p + ".ln1.gamma", {d}, Init::ones);
  ps.create(p + ".ln1.beta", {d}, Init::zeros);
  build_attention(ps, p + ".attn", d);
  ps.create(p + ".ln2.gamma", {d}, Init::ones);
  ps.create(p + ".ln2.beta", {d}, Init::zeros);
  ps.create(p + ".mlp.fc1.w", {d, cfg.mlp_sizes[0]}, Init::normal_002);
  ps.create(p + ".mlp.fc1.b", {cfg.mlp_sizes[0]}, Init::zeros);
  ps.create(p + ".mlp.fc2.w", {cfg.mlp_sizes[0], cfg.mlp_sizes[1]},
            Init::normal_002);
  ps.create(p + ".mlp.fc2.b", {cfg.mlp_sizes[1]}, Init::zeros);
}

/// Pre-norm encoder: t1 = x + MHA(LN(x)); out = t1 + MLP(LN(t1)) where the
/// MLP is dense -> gelu -> dropout -> dense -> gelu -> dropout.
template <typename T>
Tensor<T> transformer_encoder_block(ParameterStore<T>& ps,
                                    const std::string& p,
                                    const Tensor<T>& tokens,
                                    const BlockConfig& cfg, const Mode& mode) {
  auto normed = layer_norm(tokens, ps.at(p + ".ln1.gamma"),
                           ps.at(p + ".ln1.beta"));
  auto t1 = add(tokens, multi_head_attention(ps, p + ".attn", normed,
                                             cfg.heads));
  auto m = layer_norm(t1, ps.at(p + ".ln2.gamma"), ps.at(p + ".ln2.beta"));
  m = dense(m, ps.at(p + ".mlp.fc1.w"),
            std::optional<Tensor<T>>(ps.at(p + ".mlp.fc1.b")));
  m = dropout(gelu(m), static_cast<T>(cfg.dropout_rate), mode, p + ".mlp.drop1");
  m = dense(m, ps.at(p + ".mlp.fc2.w"),
            std::optional<Tensor<T>>(ps.at(p + ".mlp.fc2.b")));
  m = dropout(gelu(m), static_cast<T>(cfg.dropout_rate), mode, p + ".mlp.drop2");
  return add(t1, m);
}

}  // namespace vtgan
