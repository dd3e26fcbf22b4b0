#pragma once

#include <string>
#include <vector>

#include "vtgan/blocks.hpp"
#include "vtgan/core.hpp"
#include "vtgan/ops.hpp"
#include "vtgan/params.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

// ---------------------------------------------------------------------------
// Vision-transformer Markovian discriminator: the fundus/angiogram pair is
// concatenated along channels, cut into 64 patches, linearly embedded with
// learned position offsets, pushed through 8 pre-norm encoder blocks, and
// read out by two heads - a tanh patch-score plane (tokens x dims treated as
// an image) and a mean-pooled 2-class MLP head.
// ---------------------------------------------------------------------------

struct VtConfig {
  std::size_t image_size = 512;
  std::size_t patch = 64;      // image_size / 8 keeps 64 tokens at any scale
  std::size_t token_dim = 64;  // D
  std::size_t heads = 4;
  std::size_t encoder_blocks = 8;
  std::vector<std::size_t> mlp_sizes{128, 64};
  double dropout = 0.1;
  std::size_t fundus_channels = 3;
  std::size_t angio_channels = 1;

  std::size_t grid() const { return image_size / patch; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t token_len() const {
    return patch * patch * (fundus_channels + angio_channels);
  }
  BlockConfig encoder_config() const {
    BlockConfig b;
    b.latent_dim = token_dim;
    b.heads = heads;
    b.mlp_sizes = mlp_sizes;
    b.dropout_rate = dropout;
    return b;
  }
};

inline constexpr const char* kVtFinePrefix = "vt_fine";
inline constexpr const char* kVtCoarsePrefix = "vt_coarse";

template <typename T>
struct PatchSequence {
  Tensor<T> tokens;  // T x len (raw) or T x D (embedded)
  std::size_t rows = 0, cols = 0;
  std::size_t source_resolution = 0;
};

/// Cuts an H x W x C image into non-overlapping row-major patches, each
/// flattened to patch*patch*C values.
template <typename T>
PatchSequence<T> patchify(const Tensor<T>& image, std::size_t patch) {
  PatchSequence<T> seq;
  seq.tokens = patchify_tokens(image, patch);
  seq.rows = image.dim(0) / patch;
  seq.cols = image.dim(1) / patch;
  seq.source_resolution = image.dim(0);
  return seq;
}

/// tokens = patches * projection + positions.
template <typename T>
PatchSequence<T> embed(const PatchSequence<T>& patches,
                       const Tensor<T>& projection,
                       const Tensor<T>& positions) {
  check<ShapeError>(projection.rank() == 2 &&
                        projection.dim(0) == patches.tokens.dim(1),
                    "embed projection ", shape_str(projection.shape()),
                    " does not accept token length ", patches.tokens.dim(1));
  check<ShapeError>(positions.rank() == 2 &&
                        positions.dim(0) == patches.tokens.dim(0) &&
                        positions.dim(1) == projection.dim(1),
                    "position table ", shape_str(positions.shape()),
                    " does not match ", patches.tokens.dim(0), " tokens of dim ",
                    projection.dim(1));
  PatchSequence<T> out = patches;
  out.tokens = add(dense(patches.tokens, projection, std::nullopt), positions);
  return out;
}

template <typename T>
void build_vt(ParameterStore<T>& ps, const std::string& prefix,
              const VtConfig& cfg) {
  check<Error>(cfg.image_size % cfg.patch == 0, "image size ", cfg.image_size,
               " not divisible by patch ", cfg.patch);
  ps.create(prefix + ".embed.proj", {cfg.token_len(), cfg.token_dim},
            Init::normal_002);
  ps.create(prefix + ".embed.pos", {cfg.tokens(), cfg.token_dim},
            Init::normal_002);
  BlockConfig enc = cfg.encoder_config();
  for (std::size_t i = 1; i <= cfg.encoder_blocks; ++i)
    build_encoder_block(ps, prefix + ".enc" + std::to_string(i), enc);
  ps.create(prefix + ".adv_head.conv.w", {3, 3, 1, 1}, Init::normal_002);
  ps.create(prefix + ".adv_head.conv.b", {1}, Init::zeros);
  std::size_t d = cfg.token_dim;
  ps.create(prefix + ".cls_head.fc1.w", {d, d}, Init::normal_002);
  ps.create(prefix + ".cls_head.fc1.b", {d}, Init::zeros);
  ps.create(prefix + ".cls_head.fc2.w", {d, 2}, Init::normal_002);
  ps.create(prefix + ".cls_head.fc2.b", {2}, Init::zeros);
}

template <typename T>
struct VtOutput {
  Tensor<T> adv_map;       // T x D (single) or B x T x D, values in [-1,1]
  Tensor<T> class_logits;  // 2 or B x 2
  Tensor<T> class_probs;   // softmax of logits
};

namespace detail {

/// Embedding + encoder stack for one H x W x C image; optionally records the
/// post-embedding tokens and each encoder output.
template <typename T>
Tensor<T> vt_tokens(ParameterStore<T>& ps, const std::string& prefix,
                    const VtConfig& cfg, const Tensor<T>& image,
                    const Mode& mode, std::vector<Tensor<T>>* taps) {
  auto seq = patchify(image, cfg.patch);
  auto tokens =
      embed(seq, ps.at(prefix + ".embed.proj"), ps.at(prefix + ".embed.pos"))
          .tokens;
  if (taps) taps->push_back(tokens);
  BlockConfig enc = cfg.encoder_config();
  for (std::size_t i = 1; i <= cfg.encoder_blocks; ++i) {
    tokens = transformer_encoder_block(
        ps, prefix + ".enc" + std::to_string(i), tokens, enc, mode);
    if (taps) taps->push_back(tokens);
  }
  return tokens;
}

template <typename T>
Tensor<T> concat_pair(ParameterStore<T>& ps, const std::string& prefix,
                      const VtConfig& cfg, const Tensor<T>& fundus,
                      const Tensor<T>& angio) {
  check<ShapeError>(fundus.rank() == angio.rank(),
                    "fundus/angiogram rank mismatch: ",
                    shape_str(fundus.shape()), " vs ",
                    shape_str(angio.shape()));
  std::size_t sp = fundus.rank() == 4 ? 1 : 0;
  check<ShapeError>(fundus.dim(sp) == angio.dim(sp) &&
                        fundus.dim(sp + 1) == angio.dim(sp + 1),
                    "fundus/angiogram spatial mismatch: ",
                    shape_str(fundus.shape()), " vs ",
                    shape_str(angio.shape()));
  check<ShapeError>(fundus.dim(sp) == cfg.image_size &&
                        fundus.dim(sp + 1) == cfg.image_size,
                    prefix, " expects ", cfg.image_size, "x", cfg.image_size,
                    " inputs, got ", shape_str(fundus.shape()));
  return concat<T>({fundus, angio}, sp + 2);
}

}  // namespace detail

/// Full discriminator pass on an image pair (rank-3 single or rank-4 batch).
template <typename T>
VtOutput<T> vt_forward(ParameterStore<T>& ps, const std::string& prefix,
                       const VtConfig& cfg, const Tensor<T>& fundus,
                       const Tensor<T>& angio, const Mode& mode) {
  Tensor<T> both = detail::concat_pair(ps, prefix, cfg, fundus, angio);
  std::size_t t = cfg.tokens(), d = cfg.token_dim;

  auto single = [&](const Tensor<T>& image) {
    auto tokens = detail::vt_tokens<T>(ps, prefix, cfg, image, mode, nullptr);
    // adversarial head: the T x D token matrix as a 1-channel plane
    auto plane = reshape(tokens, {1, t, d, 1});
    auto adv = conv2d(plane, ps.at(prefix + ".adv_head.conv.w"),
                      std::optional<Tensor<T>>(ps.at(prefix + ".adv_head.conv.b")),
                      1, 1, Padding::same);
    auto adv_map = reshape(tanh_act(adv), {t, d});
    // classification head: mean-pooled tokens -> MLP -> 2 logits
    auto pooled = reshape(mean_rows(tokens), {1, d});
    auto hcls = gelu(dense(pooled, ps.at(prefix + ".cls_head.fc1.w"),
                           std::optional<Tensor<T>>(ps.at(prefix + ".cls_head.fc1.b"))));
    auto logits = dense(hcls, ps.at(prefix + ".cls_head.fc2.w"),
                        std::optional<Tensor<T>>(ps.at(prefix + ".cls_head.fc2.b")));
    return std::pair{adv_map, logits};  // logits 1x2
  };

  VtOutput<T> out;
  if (both.rank() == 3) {
    auto [adv_map, logits] = single(both);
    out.adv_map = adv_map;
    out.class_logits = reshape(logits, {2});
    out.class_probs = softmax(out.class_logits, 0);
  } else {
    std::size_t b = both.dim(0);
    std::size_t h = both.dim(1), w = both.dim(2), c = both.dim(3);
    std::vector<Tensor<T>> adv_maps, logit_rows;
    for (std::size_t i = 0; i < b; ++i) {
      auto image = reshape(slice(both, 0, i, 1), {h, w, c});
      auto [adv_map, logits] = single(image);
      adv_maps.push_back(reshape(adv_map, {1, t, d}));
      logit_rows.push_back(logits);
    }
    out.adv_map = b == 1 ? adv_maps[0] : concat(adv_maps, 0);
    out.class_logits = b == 1 ? logit_rows[0] : concat(logit_rows, 0);
    out.class_probs = softmax(out.class_logits, 1);
  }
  return out;
}

/// The embedding-and-encoder feature taps used by the embedding feature
/// loss: the post-embedding token matrix plus each encoder block output,
/// in order (9 tensors with the default 8-block stack).
template <typename T>
std::vector<Tensor<T>> embedding_features(ParameterStore<T>& ps,
                                          const std::string& prefix,
                                          const VtConfig& cfg,
                                          const Tensor<T>& fundus,
                                          const Tensor<T>& angio,
                                          const Mode& mode) {
  Tensor<T> both = detail::concat_pair(ps, prefix, cfg, fundus, angio);
  std::size_t t = cfg.tokens(), d = cfg.token_dim;
  if (both.rank() == 3) {
    std::vector<Tensor<T>> taps;
    detail::vt_tokens(ps, prefix, cfg, both, mode, &taps);
    return taps;
  }
  std::size_t b = both.dim(0);
  std::size_t h = both.dim(1), w = both.dim(2), c = both.dim(3);
  std::vector<std::vector<Tensor<T>>> per_image(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto image = reshape(slice(both, 0, i, 1), {h, w, c});
    detail::vt_tokens(ps, prefix, cfg, image, mode, &per_image[i]);
  }
  std::vector<Tensor<T>> out;
  for (std::size_t tap = 0; tap < per_image[0].size(); ++tap) {
    std::vector<Tensor<T>> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i)
      rows.push_back(reshape(per_image[i][tap], {1, t, d}));
    out.push_back(b == 1 ? rows[0] : concat(rows, 0));
  }
  return out;
}

}  // namespace vtgan
