#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vtgan/generators.hpp"
#include "vtgan/losses.hpp"

using vtgan::GeneratorConfig;
using vtgan::Mode;
using vtgan::ParameterStore;
using vtgan::Tensor;

namespace {

GeneratorConfig desk_cfg() {
  GeneratorConfig cfg;
  cfg.fine_size = 64;
  cfg.base_channels = 16;
  return cfg;
}

Tensor<double> rand_image(vtgan::Shape shape, std::uint64_t key) {
  vtgan::CounterRng rng(key, "gen.image");
  std::vector<double> v(vtgan::numel(shape));
  for (auto& x : v) x = 2.0 * rng.next_uniform() - 1.0;
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST(Generators, CoarseHasMoreParametersThanFine) {
  ParameterStore<double> ps(20);
  vtgan::build_generators(ps, desk_cfg());
  EXPECT_GT(ps.parameter_count("g_coarse"), ps.parameter_count("g_fine"));
}

TEST(Generators, CoarseForwardShapesAndRange) {
  ParameterStore<double> ps(21);
  auto cfg = desk_cfg();
  vtgan::build_generators(ps, cfg);
  auto x = rand_image({1, 32, 32, 3}, 1);
  auto [fa, feat] = vtgan::coarse_forward(ps, cfg, x, Mode::eval());
  EXPECT_EQ(fa.shape(), (vtgan::Shape{1, 32, 32, 1}));
  EXPECT_EQ(feat.shape(), (vtgan::Shape{1, 32, 32, 16}));
  for (double v : fa.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(vtgan::coarse_forward(ps, cfg, rand_image({1, 16, 16, 3}, 2),
                                     Mode::eval()),
               vtgan::ShapeError);
}

TEST(Generators, FineForwardInjectionContract) {
  ParameterStore<double> ps(22);
  auto cfg = desk_cfg();
  vtgan::build_generators(ps, cfg);
  auto x = rand_image({1, 64, 64, 3}, 3);
  auto feat = rand_image({1, 32, 32, 16}, 4);
  auto fa = vtgan::fine_forward(ps, cfg, x, feat, Mode::eval());
  EXPECT_EQ(fa.shape(), (vtgan::Shape{1, 64, 64, 1}));

  auto zero_feat = Tensor<double>::zeros({1, 32, 32, 16});
  auto fa0 = vtgan::fine_forward(ps, cfg, x, zero_feat, Mode::eval());
  EXPECT_TRUE(vtgan::all_finite(fa0.data()));
  double diff = 0;
  for (std::size_t i = 0; i < fa.size(); ++i)
    diff = std::max(diff, std::abs(fa.data()[i] - fa0.data()[i]));
  EXPECT_GT(diff, 1e-9);

  EXPECT_THROW(vtgan::fine_forward(ps, cfg, x, rand_image({1, 16, 16, 16}, 5),
                                   Mode::eval()),
               vtgan::ShapeError);
}

TEST(Generators, SynthesizeShapesDeterminismAndVariance) {
  ParameterStore<double> ps(23);
  auto cfg = desk_cfg();
  vtgan::build_generators(ps, cfg);
  auto fundus = rand_image({1, 64, 64, 3}, 6);
  auto a = vtgan::synthesize(ps, cfg, fundus, Mode::eval());
  EXPECT_EQ(a.fine.shape(), (vtgan::Shape{1, 64, 64, 1}));
  EXPECT_EQ(a.coarse.shape(), (vtgan::Shape{1, 32, 32, 1}));
  auto b = vtgan::synthesize(ps, cfg, fundus, Mode::eval());
  EXPECT_EQ(a.fine.data(), b.fine.data());
  EXPECT_EQ(a.coarse.data(), b.coarse.data());

  double mean = 0;
  for (double v : a.fine.data()) mean += v;
  mean /= static_cast<double>(a.fine.size());
  double var = 0;
  for (double v : a.fine.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(a.fine.size());
  EXPECT_GT(var, 1e-10);
}

TEST(Generators, GradientReachesEveryTrainableParameter) {
  ParameterStore<double> ps(24);
  auto cfg = desk_cfg();
  vtgan::build_generators(ps, cfg);
  auto fundus = rand_image({2, 64, 64, 3}, 7);
  auto target_f = rand_image({2, 64, 64, 1}, 8);
  auto target_c = rand_image({2, 32, 32, 1}, 9);

  auto out = vtgan::synthesize(ps, cfg, fundus, Mode::training(1, 0));
  auto loss = vtgan::add(vtgan::mse(out.fine, target_f),
                         vtgan::mse(out.coarse, target_c));
  loss.backward();

  std::size_t zero_grads = 0;
  for (const auto& path : ps.paths("g_")) {
    if (ps.kind(path) != vtgan::ParamKind::weight) continue;
    ASSERT_TRUE(ps.at(path).has_grad()) << path;
    double mag = 0;
    for (double g : ps.at(path).grad()) mag += std::abs(g);
    if (mag == 0.0) ++zero_grads;
    EXPECT_GT(mag, 0.0) << "dead branch at " << path;
  }
  EXPECT_EQ(zero_grads, 0u);
}

TEST(Generators, FineLossTouchesBothGeneratorBodies) {
  ParameterStore<double> ps(25);
  auto cfg = desk_cfg();
  vtgan::build_generators(ps, cfg);
  auto fundus = rand_image({2, 64, 64, 3}, 10);
  auto target = rand_image({2, 64, 64, 1}, 11);
  auto out = vtgan::synthesize(ps, cfg, fundus, Mode::training(1, 0));
  vtgan::mse(out.fine, target).backward();
  for (const char* path : {"g_coarse.down1.conv.w", "g_coarse.res5.stem.sepconv.dw",
                           "g_coarse.up2.deconv.w", "g_fine.down1.conv.w",
                           "g_fine.res2.branch_d2.sepconv.pw",
                           "g_fine.head.conv.w"}) {
    ASSERT_TRUE(ps.at(path).has_grad()) << path;
    double mag = 0;
    for (double g : ps.at(path).grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << path;
  }
}
