#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vtgan/discriminators.hpp"
#include "vtgan/gradcheck.hpp"
#include "vtgan/losses.hpp"

using vtgan::Mode;
using vtgan::ParameterStore;
using vtgan::Tensor;
using vtgan::VtConfig;

namespace {

VtConfig desk_vt(std::size_t image_size = 64) {
  VtConfig cfg;
  cfg.image_size = image_size;
  cfg.patch = image_size / 8;
  cfg.token_dim = 16;
  cfg.heads = 4;
  cfg.mlp_sizes = {32, 16};
  cfg.dropout = 0.1;
  return cfg;
}

Tensor<double> rand_image(vtgan::Shape shape, std::uint64_t key) {
  vtgan::CounterRng rng(key, "vt.image");
  std::vector<double> v(vtgan::numel(shape));
  for (auto& x : v) x = 2.0 * rng.next_uniform() - 1.0;
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST(Patchify, FullScaleTokenContract) {
  auto img = rand_image({512, 512, 4}, 1);
  auto seq = vtgan::patchify(img, 64);
  EXPECT_EQ(seq.tokens.shape(), (vtgan::Shape{64, 16384}));
  EXPECT_EQ(seq.rows, 8u);
  EXPECT_EQ(seq.cols, 8u);
  EXPECT_EQ(seq.source_resolution, 512u);
}

TEST(Embed, ZeroWeightsAndPositionSensitivity) {
  auto img = rand_image({16, 16, 4}, 2);
  auto seq = vtgan::patchify(img, 8);  // 4 tokens of length 256
  auto zero_proj = Tensor<double>::zeros({256, 8});
  auto zero_pos = Tensor<double>::zeros({4, 8});
  auto z = vtgan::embed(seq, zero_proj, zero_pos);
  for (double v : z.tokens.data()) EXPECT_DOUBLE_EQ(v, 0.0);

  vtgan::CounterRng rng(3, "embed");
  auto proj = Tensor<double>::from_data({256, 8},
                                        oracle::random_vec(256 * 8, rng, 0.1));
  auto pos =
      Tensor<double>::from_data({4, 8}, oracle::random_vec(32, rng, 0.1));
  auto a = vtgan::embed(seq, proj, pos);
  // swap two input patches: token matrix must change (position sensitivity)
  auto swapped_tokens = seq;
  auto data = seq.tokens.data();
  std::vector<double> sd = data;
  for (std::size_t i = 0; i < 256; ++i)
    std::swap(sd[0 * 256 + i], sd[3 * 256 + i]);
  swapped_tokens.tokens = Tensor<double>::from_data({4, 256}, sd);
  auto b = vtgan::embed(swapped_tokens, proj, pos);
  EXPECT_NE(a.tokens.data(), b.tokens.data());

  EXPECT_THROW(vtgan::embed(seq, Tensor<double>::zeros({100, 8}), pos),
               vtgan::ShapeError);
}

TEST(Embed, ProjectsToLatentDim) {
  auto img = rand_image({512, 512, 4}, 4);
  auto seq = vtgan::patchify(img, 64);
  vtgan::CounterRng rng(5, "embed.proj");
  auto proj = Tensor<double>::from_data(
      {16384, 64}, oracle::random_vec(16384 * 64, rng, 0.01));
  auto pos =
      Tensor<double>::from_data({64, 64}, oracle::random_vec(64 * 64, rng));
  auto tokens = vtgan::embed(seq, proj, pos).tokens;
  EXPECT_EQ(tokens.shape(), (vtgan::Shape{64, 64}));
}

TEST(VtForward, OutputContracts) {
  auto cfg = desk_vt();
  ParameterStore<double> ps(30);
  vtgan::build_vt(ps, "vt_fine", cfg);
  auto fundus = rand_image({64, 64, 3}, 6);
  auto angio = rand_image({64, 64, 1}, 7);
  auto out = vtgan::vt_forward(ps, "vt_fine", cfg, fundus, angio, Mode::eval());
  EXPECT_EQ(out.adv_map.shape(), (vtgan::Shape{64, 16}));
  EXPECT_EQ(out.class_logits.shape(), (vtgan::Shape{2}));
  for (double v : out.adv_map.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  double s = out.class_probs.data()[0] + out.class_probs.data()[1];
  EXPECT_NEAR(s, 1.0, 1e-6);

  // batched pair
  auto bf = rand_image({2, 64, 64, 3}, 8);
  auto ba = rand_image({2, 64, 64, 1}, 9);
  auto bout = vtgan::vt_forward(ps, "vt_fine", cfg, bf, ba, Mode::eval());
  EXPECT_EQ(bout.adv_map.shape(), (vtgan::Shape{2, 64, 16}));
  EXPECT_EQ(bout.class_logits.shape(), (vtgan::Shape{2, 2}));
  for (std::size_t r = 0; r < 2; ++r)
    EXPECT_NEAR(bout.class_probs.data()[r * 2] +
                    bout.class_probs.data()[r * 2 + 1],
                1.0, 1e-6);

  EXPECT_THROW(vtgan::vt_forward(ps, "vt_fine", cfg, fundus,
                                 rand_image({32, 32, 1}, 10), Mode::eval()),
               vtgan::ShapeError);
}

TEST(VtForward, FineAndCoarseShareTopology) {
  auto fine = desk_vt(64);
  auto coarse = desk_vt(32);
  ParameterStore<double> ps(31);
  vtgan::build_vt(ps, "vt_fine", fine);
  vtgan::build_vt(ps, "vt_coarse", coarse);
  auto strip = [](const std::vector<std::string>& paths, std::size_t n) {
    std::vector<std::string> out;
    for (const auto& p : paths) out.push_back(p.substr(n));
    return out;
  };
  auto f = strip(ps.paths("vt_fine"), std::string("vt_fine").size());
  auto c = strip(ps.paths("vt_coarse"), std::string("vt_coarse").size());
  EXPECT_EQ(f, c);
}

TEST(VtForward, GradientThroughWholeDiscriminator) {
  // scalar = mean(adv_map) + cce through the full desk-scale stack,
  // dropout off
  auto cfg = desk_vt();
  cfg.dropout = 0.0;
  ParameterStore<double> ps(32);
  vtgan::build_vt(ps, "vt_fine", cfg);
  auto fundus = rand_image({64, 64, 3}, 11);
  auto angio = rand_image({64, 64, 1}, 12);
  auto label = Tensor<double>::from_data({2}, {1.0, 0.0});
  auto f = [&] {
    auto out =
        vtgan::vt_forward(ps, "vt_fine", cfg, fundus, angio, Mode::eval());
    return vtgan::add(vtgan::mean_all(out.adv_map),
                      vtgan::cce(label, out.class_probs));
  };
  std::vector<Tensor<double>> params;
  for (const auto& path :
       {"vt_fine.embed.proj", "vt_fine.embed.pos", "vt_fine.enc1.attn.wq",
        "vt_fine.enc4.mlp.fc1.w", "vt_fine.enc8.ln2.gamma",
        "vt_fine.adv_head.conv.w", "vt_fine.cls_head.fc2.w"})
    params.push_back(ps.at(path));
  vtgan::GradCheckOptions opts;
  opts.coords_per_tensor = 4;
  EXPECT_LT(vtgan::gradient_check(f, params, opts), 1e-4);
}

TEST(EmbeddingFeatures, NineTapsDeterministicAndInputSensitive) {
  auto cfg = desk_vt();
  ParameterStore<double> ps(33);
  vtgan::build_vt(ps, "vt_fine", cfg);
  auto fundus = rand_image({64, 64, 3}, 13);
  auto angio = rand_image({64, 64, 1}, 14);
  auto feats =
      vtgan::embedding_features(ps, "vt_fine", cfg, fundus, angio, Mode::eval());
  EXPECT_EQ(feats.size(), 9u);
  for (const auto& f : feats) EXPECT_EQ(f.shape(), (vtgan::Shape{64, 16}));

  auto again =
      vtgan::embedding_features(ps, "vt_fine", cfg, fundus, angio, Mode::eval());
  for (std::size_t i = 0; i < feats.size(); ++i)
    EXPECT_EQ(feats[i].data(), again[i].data());

  auto other = rand_image({64, 64, 1}, 15);
  auto diff =
      vtgan::embedding_features(ps, "vt_fine", cfg, fundus, other, Mode::eval());
  bool any_diff = false;
  for (std::size_t i = 0; i < feats.size(); ++i)
    if (feats[i].data() != diff[i].data()) any_diff = true;
  EXPECT_TRUE(any_diff);
}

TEST(VtForward, ZeroPositionsMakePooledOutputPermutationInvariant) {
  auto cfg = desk_vt();
  ParameterStore<double> ps(34);
  vtgan::build_vt(ps, "vt_fine", cfg);
  auto fundus = rand_image({64, 64, 3}, 16);
  auto angio = rand_image({64, 64, 1}, 17);

  // permute patch tiles of the pair jointly (reverse the 8x8 grid)
  auto permute_patches = [&](const Tensor<double>& img) {
    std::size_t p = cfg.patch, g = cfg.image_size / p, c = img.dim(2);
    std::vector<double> out(img.size());
    for (std::size_t r = 0; r < g; ++r)
      for (std::size_t cc = 0; cc < g; ++cc) {
        std::size_t sr = g - 1 - r, sc = g - 1 - cc;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
              out[(((r * p + y) * cfg.image_size) + cc * p + x) * c + ch] =
                  img.data()[(((sr * p + y) * cfg.image_size) + sc * p + x) *
                                 c +
                             ch];
      }
    return Tensor<double>::from_data(img.shape(), std::move(out));
  };

  auto with_positions =
      vtgan::vt_forward(ps, "vt_fine", cfg, fundus, angio, Mode::eval());
  auto with_positions_perm = vtgan::vt_forward(
      ps, "vt_fine", cfg, permute_patches(fundus), permute_patches(angio),
      Mode::eval());
  double moved = std::abs(with_positions.class_logits.data()[0] -
                          with_positions_perm.class_logits.data()[0]);
  EXPECT_GT(moved, 1e-12);

  auto& pos = ps.at("vt_fine.embed.pos").mutable_data();
  std::fill(pos.begin(), pos.end(), 0.0);
  auto base = vtgan::vt_forward(ps, "vt_fine", cfg, fundus, angio, Mode::eval());
  auto perm = vtgan::vt_forward(ps, "vt_fine", cfg, permute_patches(fundus),
                                permute_patches(angio), Mode::eval());
  EXPECT_NEAR(base.class_logits.data()[0], perm.class_logits.data()[0], 1e-9);
  EXPECT_NEAR(base.class_logits.data()[1], perm.class_logits.data()[1], 1e-9);
}
