#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "vtgan/image_io.hpp"
#include "vtgan/metrics.hpp"

using vtgan::ConfusionCounts;
using vtgan::FeatureCloud;
using vtgan::Label;
using vtgan::Tensor;

namespace {

FeatureCloud make_cloud(std::size_t n, std::size_t d, std::vector<double> x,
                        const std::string& id = "test") {
  FeatureCloud c;
  c.n = n;
  c.d = d;
  c.x = std::move(x);
  c.extractor_id = id;
  return c;
}

FeatureCloud random_cloud(std::size_t n, std::size_t d, vtgan::CounterRng& rng,
                          double mean = 0.0, double scale = 1.0) {
  std::vector<double> x(n * d);
  for (auto& v : x) v = mean + scale * rng.next_normal();
  return make_cloud(n, d, std::move(x));
}

/// Exact sample moments: mean 0, unbiased covariance I, via the 2d points
/// +-sqrt((n-1)/2) e_j.
FeatureCloud unit_cloud(std::size_t d, const std::vector<double>& shift) {
  std::size_t n = 2 * d;
  double r = std::sqrt(static_cast<double>(n - 1) / 2.0);
  std::vector<double> x(n * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    x[(2 * j) * d + j] = r;
    x[(2 * j + 1) * d + j] = -r;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] += shift[j];
  return make_cloud(n, d, std::move(x));
}

}  // namespace

TEST(Fid, ZeroOnIdenticalClouds) {
  vtgan::CounterRng rng(60, "fid.same");
  auto a = random_cloud(12, 5, rng);
  EXPECT_NEAR(vtgan::fid(a, a), 0.0, 1e-6);
}

TEST(Fid, EqualCovarianceCloudsGiveSquaredMeanDistance) {
  auto a = unit_cloud(3, {0, 0, 0});
  auto b = unit_cloud(3, {1, 0, 0});
  EXPECT_NEAR(vtgan::fid(a, b), 1.0, 1e-6);
  auto c = unit_cloud(3, {0.5, -1.5, 2.0});
  EXPECT_NEAR(vtgan::fid(a, c), 0.25 + 2.25 + 4.0, 1e-6);
}

TEST(Fid, OneDimensionalClosedForm) {
  // sample moments (0,1) and (3,2): FID = (3-0)^2 + (2-1)^2 = 10
  double s = 1.0 / std::sqrt(2.0);
  auto a = make_cloud(2, 1, {-s, s});
  auto b = make_cloud(2, 1, {3.0 - std::sqrt(2.0), 3.0 + std::sqrt(2.0)});
  EXPECT_NEAR(vtgan::fid(a, b), 10.0, 1e-6);
}

TEST(Fid, SymmetricAndBoundedBelow) {
  vtgan::CounterRng rng(61, "fid.sym");
  auto a = random_cloud(20, 6, rng, 0.0, 1.0);
  auto b = random_cloud(16, 6, rng, 0.7, 1.4);
  double ab = vtgan::fid(a, b);
  double ba = vtgan::fid(b, a);
  EXPECT_NEAR(ab, ba, 1e-6);
  EXPECT_GE(ab, -1e-6);
}

TEST(Fid, InputValidation) {
  vtgan::CounterRng rng(62, "fid.val");
  auto a = random_cloud(5, 3, rng);
  auto b = random_cloud(5, 4, rng);
  EXPECT_THROW(vtgan::fid(a, b), vtgan::DataError);
  auto c = random_cloud(1, 3, rng);
  EXPECT_THROW(vtgan::fid(a, c), vtgan::DataError);
  auto d = random_cloud(5, 3, rng);
  d.extractor_id = "other";
  EXPECT_THROW(vtgan::fid(a, d), vtgan::DataError);
}

TEST(Kid, ZeroOnConstantAndIdenticalClouds) {
  std::vector<double> c = {1.0, -2.0, 0.5};
  std::vector<double> rows;
  for (int i = 0; i < 4; ++i) rows.insert(rows.end(), c.begin(), c.end());
  auto constant = make_cloud(4, 3, rows);
  EXPECT_DOUBLE_EQ(vtgan::kid(constant, constant), 0.0);

  vtgan::CounterRng rng(63, "kid.same");
  auto a = random_cloud(10, 4, rng);
  EXPECT_NEAR(vtgan::kid(a, a), 0.0, 1e-9);
}

TEST(Kid, MatchesTripleLoopOracle) {
  auto a = make_cloud(4, 1, {0.3, -1.2, 2.0, 0.7});
  auto b = make_cloud(4, 1, {1.0, 0.1, -0.4, 1.7});
  double expect = oracle::kid_triple_loop(a.x, 4, b.x, 4, 1);
  EXPECT_NEAR(vtgan::kid(a, b), expect, 1e-12);

  vtgan::CounterRng rng(64, "kid.oracle");
  auto c = random_cloud(7, 5, rng);
  auto d = random_cloud(9, 5, rng, 0.4);
  EXPECT_NEAR(vtgan::kid(c, d), oracle::kid_triple_loop(c.x, 7, d.x, 9, 5),
              1e-12);
  EXPECT_NEAR(vtgan::kid(c, d), vtgan::kid(d, c), 1e-12);
}

TEST(Kid, UnbiasedAroundZeroForEqualDistributions) {
  // mean over 100 resamples of a fixed synthetic distribution within 3 SE
  vtgan::CounterRng rng(65, "kid.unbiased");
  std::vector<double> estimates;
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_cloud(12, 3, rng);
    auto b = random_cloud(12, 3, rng);
    estimates.push_back(vtgan::kid(a, b));
  }
  double mean = 0;
  for (double e : estimates) mean += e;
  mean /= static_cast<double>(estimates.size());
  double var = 0;
  for (double e : estimates) var += (e - mean) * (e - mean);
  var /= static_cast<double>(estimates.size() - 1);
  double se = std::sqrt(var / static_cast<double>(estimates.size()));
  EXPECT_LT(std::abs(mean), 3.0 * se + 1e-12);
}

TEST(ClassificationMetrics, ReproducesReportedTables) {
  // 36 Normal / 20 Abnormal test crops, Normal as the positive class
  ConfusionCounts in_dist{30, 2, 18, 6, Label::normal};
  auto m = vtgan::classification_metrics(in_dist);
  EXPECT_NEAR(100.0 * m.accuracy, 85.7, 0.05);
  EXPECT_NEAR(100.0 * m.sensitivity, 83.3, 0.05);
  EXPECT_NEAR(100.0 * m.specificity, 90.0, 0.05);

  ConfusionCounts distorted{26, 2, 18, 10, Label::normal};
  auto md = vtgan::classification_metrics(distorted);
  EXPECT_NEAR(100.0 * md.accuracy, 78.6, 0.05);
  EXPECT_NEAR(100.0 * md.sensitivity, 72.2, 0.05);
  EXPECT_NEAR(100.0 * md.specificity, 90.0, 0.05);

  ConfusionCounts perfect{36, 0, 20, 0, Label::normal};
  auto mp = vtgan::classification_metrics(perfect);
  EXPECT_DOUBLE_EQ(mp.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(mp.sensitivity, 1.0);
  EXPECT_DOUBLE_EQ(mp.specificity, 1.0);

  ConfusionCounts no_negatives{5, 0, 0, 1, Label::normal};
  EXPECT_THROW(vtgan::classification_metrics(no_negatives),
               vtgan::NumericError);
  EXPECT_THROW(vtgan::classification_metrics(ConfusionCounts{}),
               vtgan::DataError);
}

TEST(ClassificationMetrics, ConfusionFromLabelPairs) {
  std::vector<std::pair<Label, Label>> pairs;
  for (int i = 0; i < 30; ++i) pairs.push_back({Label::normal, Label::normal});
  for (int i = 0; i < 6; ++i) pairs.push_back({Label::normal, Label::abnormal});
  for (int i = 0; i < 18; ++i)
    pairs.push_back({Label::abnormal, Label::abnormal});
  for (int i = 0; i < 2; ++i) pairs.push_back({Label::abnormal, Label::normal});
  auto c = vtgan::confusion_from_pairs(pairs);
  EXPECT_EQ(c.tp, 30u);
  EXPECT_EQ(c.fn, 6u);
  EXPECT_EQ(c.tn, 18u);
  EXPECT_EQ(c.fp, 2u);
  EXPECT_EQ(c.total(), 56u);
}

TEST(EvaluateRun, IdenticalDirectoriesScoreZeroWithRowPerCondition) {
  namespace fs = std::filesystem;
  std::string base = testing::TempDir() + "evalrun/";
  fs::create_directories(base + "gen");
  fs::create_directories(base + "ref");
  vtgan::CounterRng rng(66, "eval.imgs");
  for (int i = 0; i < 6; ++i) {
    std::vector<double> v(24 * 24);
    for (auto& x : v) x = 2.0 * rng.next_uniform() - 1.0;
    auto img = Tensor<double>::from_data({24, 24, 1}, v);
    vtgan::write_png(base + "gen/img" + std::to_string(i) + ".png", img);
    vtgan::write_png(base + "ref/img" + std::to_string(i) + ".png", img);
  }
  auto fx = vtgan::CnnFeatureExtractor<double>::random_desk(11, 1);
  vtgan::DistortionDefaults strengths;
  auto report = vtgan::evaluate_run(base + "gen", base + "ref", std::nullopt,
                                    fx, vtgan::all_distortions(), strengths, 1);
  ASSERT_EQ(report.rows.size(), 6u);  // none + 5 distortions
  EXPECT_EQ(report.rows[0].condition, "none");
  EXPECT_NEAR(report.rows[0].fid, 0.0, 1e-6);
  EXPECT_NEAR(report.rows[0].kid, 0.0, 1e-9);
  for (const auto& r : report.rows) {
    EXPECT_TRUE(std::isfinite(r.fid));
    EXPECT_TRUE(std::isfinite(r.kid));
  }
  // distorted conditions move away from the reference
  EXPECT_GT(report.rows[1].fid, report.rows[0].fid);

  auto again = vtgan::evaluate_run(base + "gen", base + "ref", std::nullopt,
                                   fx, vtgan::all_distortions(), strengths, 1);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    EXPECT_DOUBLE_EQ(report.rows[i].fid, again.rows[i].fid);
    EXPECT_DOUBLE_EQ(report.rows[i].kid, again.rows[i].kid);
  }
  fs::remove_all(base);
}

TEST(EvaluateRun, LabelsWithPredictionsAndCountMismatch) {
  namespace fs = std::filesystem;
  std::string base = testing::TempDir() + "evalrun2/";
  fs::create_directories(base + "gen");
  fs::create_directories(base + "ref");
  vtgan::CounterRng rng(67, "eval2.imgs");
  for (int i = 0; i < 3; ++i) {
    std::vector<double> v(16 * 16);
    for (auto& x : v) x = 2.0 * rng.next_uniform() - 1.0;
    auto img = Tensor<double>::from_data({16, 16, 1}, v);
    vtgan::write_png(base + "gen/i" + std::to_string(i) + ".png", img);
    vtgan::write_png(base + "ref/i" + std::to_string(i) + ".png", img);
  }
  std::string labels = base + "labels.csv";
  {
    std::ofstream out(labels);
    out << "patient_id,label,predicted\n";
    out << "a,Normal,Normal\nb,Normal,Abnormal\nc,Abnormal,Abnormal\n";
  }
  auto fx = vtgan::CnnFeatureExtractor<double>::random_desk(12, 1);
  vtgan::DistortionDefaults strengths;
  auto report = vtgan::evaluate_run(base + "gen", base + "ref", labels, fx, {},
                                    strengths, 0);
  ASSERT_TRUE(report.classification.has_value());
  EXPECT_NEAR(report.classification->accuracy, 2.0 / 3.0, 1e-12);
  std::ostringstream jsonl, table;
  report.write_jsonl(jsonl);
  report.write_table(table);
  EXPECT_NE(jsonl.str().find("accuracy"), std::string::npos);
  EXPECT_NE(table.str().find("condition"), std::string::npos);

  vtgan::write_png(base + "gen/extra.png",
                   Tensor<double>::zeros({16, 16, 1}));
  EXPECT_THROW(vtgan::evaluate_run(base + "gen", base + "ref", std::nullopt,
                                   fx, {}, strengths, 0),
               vtgan::DataError);
  fs::remove_all(base);
}
