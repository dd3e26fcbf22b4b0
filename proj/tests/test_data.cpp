#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "vtgan/data.hpp"
#include "vtgan/image_io.hpp"

using vtgan::DistortionKind;
using vtgan::DistortionSpec;
using vtgan::FundusAngioPair;
using vtgan::Label;
using vtgan::Tensor;

namespace {

FundusAngioPair<double> synthetic_pair(std::size_t h, std::size_t w,
                                       const std::string& id, Label label,
                                       std::uint64_t key = 0) {
  vtgan::CounterRng rng(key, "pair." + id);
  std::vector<double> f(h * w * 3), a(h * w);
  for (auto& v : f) v = 2.0 * rng.next_uniform() - 1.0;
  for (auto& v : a) v = 2.0 * rng.next_uniform() - 1.0;
  FundusAngioPair<double> p;
  p.fundus = Tensor<double>::from_data({h, w, 3}, std::move(f));
  p.angio = Tensor<double>::from_data({h, w, 1}, std::move(a));
  p.label = label;
  p.patient_id = id;
  return p;
}

Tensor<double> smooth_image(std::size_t h, std::size_t w) {
  std::vector<double> v(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      v[y * w + x] = 0.5 * std::cos(2.0 * M_PI * 1.5 * y / h) *
                     std::sin(2.0 * M_PI * 2.0 * x / w);
  return Tensor<double>::from_data({h, w, 1}, std::move(v));
}

}  // namespace

TEST(ExtractCrops, OriginBoundsMatchSourceGeometry) {
  // 576x720 source with 512 crops: origins confined to rows [0,64], cols [0,208]
  std::vector<vtgan::SourceInfo> sources(1);
  sources[0] = {"p01", Label::normal, "f.png", "a.png", 576, 720};
  auto plan = vtgan::plan_training_crops(sources, 512, 50, 7);
  ASSERT_EQ(plan.size(), 50u);
  for (const auto& e : plan) {
    EXPECT_LE(e.crop_row, 64u);
    EXPECT_LE(e.crop_col, 208u);
  }
}

TEST(ExtractCrops, SeventeenSourcesYield850TrainingCrops) {
  std::vector<vtgan::SourceInfo> sources;
  for (int i = 0; i < 17; ++i)
    sources.push_back({"p" + std::to_string(i),
                       i < 10 ? Label::abnormal : Label::normal, "f", "a", 576,
                       720});
  EXPECT_EQ(vtgan::plan_training_crops(sources, 512, 50, 1).size(), 850u);
}

TEST(ExtractCrops, MaterializedCropsAreRegisteredAndSeeded) {
  auto src = synthetic_pair(40, 56, "p1", Label::abnormal, 3);
  auto crops = vtgan::extract_crops(src, 32, 5, 11);
  ASSERT_EQ(crops.size(), 5u);
  for (const auto& c : crops) {
    EXPECT_EQ(c.fundus.shape(), (vtgan::Shape{32, 32, 3}));
    EXPECT_LE(c.crop_row, 8u);
    EXPECT_LE(c.crop_col, 24u);
    // identical origin applied to both images
    EXPECT_DOUBLE_EQ(c.fundus.data()[0],
                     src.fundus.data()[(c.crop_row * 56 + c.crop_col) * 3]);
    EXPECT_DOUBLE_EQ(c.angio.data()[0],
                     src.angio.data()[c.crop_row * 56 + c.crop_col]);
  }
  auto again = vtgan::extract_crops(src, 32, 5, 11);
  for (std::size_t i = 0; i < crops.size(); ++i) {
    EXPECT_EQ(crops[i].crop_row, again[i].crop_row);
    EXPECT_EQ(crops[i].crop_col, again[i].crop_col);
  }
  // crop == source size: every crop lands at the origin
  auto full = vtgan::extract_crops(src, 40, 3, 1);
  EXPECT_EQ(full.size(), 3u);  // width still allows column offsets
  for (const auto& c : full) EXPECT_EQ(c.crop_row, 0u);
  EXPECT_THROW(vtgan::extract_crops(src, 64, 1, 0), vtgan::ShapeError);
}

TEST(QuadrantCrops, CornerAnchoredAndCountContract) {
  auto src = synthetic_pair(48, 64, "q1", Label::normal, 4);
  auto quads = vtgan::quadrant_crops(src, 32);
  ASSERT_EQ(quads.size(), 4u);
  // corner pixels of the 4 crops equal the source's corners
  std::size_t w = 64, c3 = 3;
  EXPECT_DOUBLE_EQ(quads[0].fundus.data()[0], src.fundus.data()[0]);
  EXPECT_DOUBLE_EQ(quads[1].fundus.data()[(32 - 1) * c3 + 2],
                   src.fundus.data()[(w - 1) * c3 + 2]);
  EXPECT_DOUBLE_EQ(quads[3].fundus.data()[(32 * 32 - 1) * c3],
                   src.fundus.data()[(48 * 64 - 1) * c3]);

  // degenerate: source equals crop -> 4 identical crops
  auto exact = synthetic_pair(32, 32, "q2", Label::normal, 5);
  auto same = vtgan::quadrant_crops(exact, 32);
  for (const auto& q : same) EXPECT_EQ(q.fundus.data(), same[0].fundus.data());
  EXPECT_THROW(vtgan::quadrant_crops(exact, 64), vtgan::ShapeError);

  std::vector<vtgan::SourceInfo> testset(14);
  for (int i = 0; i < 14; ++i)
    testset[i] = {"t" + std::to_string(i),
                  i < 5 ? Label::abnormal : Label::normal, "f", "a", 576, 720};
  auto plan = vtgan::plan_quadrant_crops(testset, 512, 0);
  EXPECT_EQ(plan.size(), 56u);
  std::size_t abnormal = 0, normal = 0;
  for (const auto& e : plan)
    (e.label == Label::abnormal ? abnormal : normal)++;
  EXPECT_EQ(abnormal, 20u);
  EXPECT_EQ(normal, 36u);
}

TEST(BalanceClasses, CountsAndPairedTransforms) {
  std::vector<FundusAngioPair<double>> pairs;
  for (int i = 0; i < 5; ++i)
    pairs.push_back(synthetic_pair(16, 16, "a" + std::to_string(i),
                                   Label::abnormal, 10 + i));
  for (int i = 0; i < 3; ++i)
    pairs.push_back(synthetic_pair(16, 16, "n" + std::to_string(i),
                                   Label::normal, 20 + i));
  // marker pixel for the paired-transform round trip
  for (auto& p : pairs) {
    p.fundus.mutable_data()[(2 * 16 + 5) * 3] = 0.777;
    p.angio.mutable_data()[2 * 16 + 5] = 0.777;
  }
  auto balanced = vtgan::balance_classes(pairs, 5, 99);
  std::size_t abnormal = 0, normal = 0;
  for (const auto& p : balanced)
    (p.label == Label::abnormal ? abnormal : normal)++;
  EXPECT_EQ(abnormal, 5u);
  EXPECT_EQ(normal, 5u);

  for (std::size_t i = pairs.size(); i < balanced.size(); ++i) {
    const auto& p = balanced[i];
    EXPECT_TRUE(p.flipped || p.rotations != 0);
    // the marker must land at the same spatial location in both images
    std::size_t fundus_pos = 0, angio_pos = 0;
    for (std::size_t j = 0; j < 16 * 16; ++j) {
      if (p.fundus.data()[j * 3] == 0.777) fundus_pos = j;
      if (p.angio.data()[j] == 0.777) angio_pos = j;
    }
    EXPECT_EQ(fundus_pos, angio_pos);
    EXPECT_NE(fundus_pos, std::size_t{2 * 16 + 5});  // actually moved
  }

  auto already = vtgan::balance_classes(balanced, 5, 99);
  EXPECT_EQ(already.size(), balanced.size());
}

TEST(Distort, ZeroStrengthIsIdentityForEveryKind) {
  auto img = smooth_image(24, 24);
  for (DistortionKind kind : vtgan::all_distortions()) {
    DistortionSpec spec{kind, 0.0, 5};
    auto out = vtgan::distort(img, spec);
    ASSERT_EQ(out.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
      EXPECT_NEAR(out.data()[i], img.data()[i], 1e-6)
          << vtgan::distortion_str(kind);
  }
}

TEST(Distort, BlurPreservesConstants) {
  auto img = Tensor<double>::full({20, 20, 1}, 0.42);
  auto out = vtgan::distort(img, {DistortionKind::blur, 2.0, 0});
  for (double v : out.data()) EXPECT_NEAR(v, 0.42, 1e-9);
}

TEST(Distort, WhirlInverseRoundTripOnBandLimitedImage) {
  auto img = smooth_image(64, 64);
  auto fwd = vtgan::distort(img, {DistortionKind::whirl, 30.0, 0});
  auto back = vtgan::distort(fwd, {DistortionKind::whirl, -30.0, 0});
  double mae = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    mae += std::abs(back.data()[i] - img.data()[i]);
  mae /= static_cast<double>(img.size());
  EXPECT_LT(mae, 0.02);
  // forward pass must actually move content
  double moved = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    moved = std::max(moved, std::abs(fwd.data()[i] - img.data()[i]));
  EXPECT_GT(moved, 0.05);
}

TEST(Distort, NoiseSeededAndRangeChecked) {
  auto img = smooth_image(16, 16);
  auto a = vtgan::distort(img, {DistortionKind::noise, 0.05, 7});
  auto b = vtgan::distort(img, {DistortionKind::noise, 0.05, 7});
  EXPECT_EQ(a.data(), b.data());
  auto c = vtgan::distort(img, {DistortionKind::noise, 0.05, 8});
  EXPECT_NE(a.data(), c.data());
  for (double v : a.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(vtgan::distort(img, {DistortionKind::noise, 2.0, 0}),
               vtgan::DataError);
  EXPECT_THROW(vtgan::distort(img, {DistortionKind::blur, 50.0, 0}),
               vtgan::DataError);
}

TEST(Distort, PinchMagnifiesCenterAndKeepsShape) {
  auto img = smooth_image(32, 32);
  auto out = vtgan::distort(img, {DistortionKind::pinch, 0.3, 0});
  EXPECT_EQ(out.shape(), img.shape());
  double moved = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    moved = std::max(moved, std::abs(out.data()[i] - img.data()[i]));
  EXPECT_GT(moved, 0.01);
  // corners beyond the radial falloff stay put
  EXPECT_NEAR(out.data()[0], img.data()[0], 1e-9);
}

TEST(ImageIo, PngRoundTripGrayAndRgb) {
  std::string dir = testing::TempDir();
  auto gray = smooth_image(9, 13);
  vtgan::write_png(dir + "g.png", gray);
  auto gray2 = vtgan::read_png(dir + "g.png");
  ASSERT_EQ(gray2.shape(), gray.shape());
  for (std::size_t i = 0; i < gray.size(); ++i)
    EXPECT_NEAR(gray2.data()[i], gray.data()[i], 1.0 / 127.5);

  vtgan::CounterRng rng(5, "png.rgb");
  std::vector<double> v(8 * 10 * 3);
  for (auto& x : v) x = 2.0 * rng.next_uniform() - 1.0;
  auto rgb = Tensor<double>::from_data({8, 10, 3}, v);
  vtgan::write_png(dir + "c.png", rgb);
  auto rgb2 = vtgan::read_png(dir + "c.png");
  ASSERT_EQ(rgb2.shape(), rgb.shape());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    EXPECT_NEAR(rgb2.data()[i], rgb.data()[i], 1.0 / 127.5);

  // 8-bit quantization is exact on a second pass
  vtgan::write_png(dir + "g2.png", gray2);
  auto gray3 = vtgan::read_png(dir + "g2.png");
  EXPECT_EQ(gray3.data(), gray2.data());

  EXPECT_THROW(vtgan::read_png(dir + "missing.png"), vtgan::DataError);
  std::remove((dir + "g.png").c_str());
  std::remove((dir + "g2.png").c_str());
  std::remove((dir + "c.png").c_str());
}

TEST(Manifest, RoundTripAndDataset) {
  std::string dir = testing::TempDir();
  auto pair = synthetic_pair(24, 30, "p7", Label::abnormal, 6);
  vtgan::write_png(dir + "p7_fundus.png", pair.fundus);
  vtgan::write_png(dir + "p7_fa.png", pair.angio);

  std::vector<vtgan::SourceInfo> sources = {
      {"p7", Label::abnormal, dir + "p7_fundus.png", dir + "p7_fa.png", 24, 30}};
  auto entries = vtgan::plan_training_crops(sources, 16, 4, 3);
  entries = vtgan::balance_manifest(entries, 4, 3);
  std::string manifest = dir + "manifest.jsonl";
  vtgan::write_manifest(manifest, entries);
  auto loaded = vtgan::read_manifest(manifest);
  ASSERT_EQ(loaded.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    EXPECT_EQ(loaded[i].patient_id, entries[i].patient_id);
    EXPECT_EQ(loaded[i].crop_row, entries[i].crop_row);
    EXPECT_EQ(loaded[i].flip, entries[i].flip);
  }

  auto ds = vtgan::ManifestDataset<double>::load(manifest, "train");
  EXPECT_EQ(ds.size(), 4u);
  auto item = ds.get(0);
  EXPECT_EQ(item.fundus.shape(), (vtgan::Shape{16, 16, 3}));
  EXPECT_EQ(item.angio.shape(), (vtgan::Shape{16, 16, 1}));
  EXPECT_EQ(item.label, Label::abnormal);

  EXPECT_THROW(vtgan::ManifestDataset<double>::load(manifest, "test"),
               vtgan::DataError);
  std::remove((dir + "p7_fundus.png").c_str());
  std::remove((dir + "p7_fa.png").c_str());
  std::remove(manifest.c_str());
}

TEST(Labels, CsvParsingWithOptionalPrediction) {
  std::string path = testing::TempDir() + "labels.csv";
  {
    std::ofstream out(path);
    out << "patient_id,label,predicted\n";
    out << "p1,Normal,Abnormal\n";
    out << "p2,Abnormal,\n";
    out << "p3,Normal\n";
  }
  auto rows = vtgan::load_labels(path);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows["p1"].label, Label::normal);
  ASSERT_TRUE(rows["p1"].predicted.has_value());
  EXPECT_EQ(*rows["p1"].predicted, Label::abnormal);
  EXPECT_FALSE(rows["p2"].predicted.has_value());
  EXPECT_FALSE(rows["p3"].predicted.has_value());
  EXPECT_THROW(vtgan::label_from_string("Weird"), vtgan::DataError);
  std::remove(path.c_str());
}

TEST(Augment, Rot90AndFlipGeometry) {
  // 2x2 image with distinct values, one quarter turn counter-clockwise
  auto img = Tensor<double>::from_data({2, 2, 1}, {1, 2, 3, 4});
  auto r = vtgan::rot90_image(img, 1);
  EXPECT_DOUBLE_EQ(r.data()[0], 2.0);
  EXPECT_DOUBLE_EQ(r.data()[1], 4.0);
  EXPECT_DOUBLE_EQ(r.data()[2], 1.0);
  EXPECT_DOUBLE_EQ(r.data()[3], 3.0);
  auto r4 = vtgan::rot90_image(vtgan::rot90_image(r, 1), 2);
  EXPECT_EQ(r4.data(), img.data());  // four quarter turns total
  auto f = vtgan::hflip_image(img);
  EXPECT_DOUBLE_EQ(f.data()[0], 2.0);
  EXPECT_DOUBLE_EQ(f.data()[1], 1.0);
}
