#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "vtgan/trainer.hpp"

using vtgan::Batch;
using vtgan::FundusAngioPair;
using vtgan::Label;
using vtgan::ParameterStore;
using vtgan::RunConfig;
using vtgan::Tensor;
using vtgan::Trainer;

namespace {

RunConfig desk_run_config(std::uint64_t seed = 42) {
  RunConfig cfg;
  cfg.scale = "desk";
  cfg.gan = vtgan::GanConfig::preset("desk");
  cfg.train.epochs = 1;
  cfg.seed = seed;
  return cfg;
}

FundusAngioPair<double> desk_pair(const std::string& id, Label label,
                                  std::uint64_t key) {
  vtgan::CounterRng rng(key, "trainer.pair");
  std::vector<double> f(64 * 64 * 3), a(64 * 64);
  for (auto& v : f) v = 2.0 * rng.next_uniform() - 1.0;
  for (auto& v : a) v = 2.0 * rng.next_uniform() - 1.0;
  FundusAngioPair<double> p;
  p.fundus = Tensor<double>::from_data({64, 64, 3}, std::move(f));
  p.angio = Tensor<double>::from_data({64, 64, 1}, std::move(a));
  p.label = label;
  p.patient_id = id;
  return p;
}

std::map<std::string, std::vector<double>> snapshot(
    ParameterStore<double>& ps, const std::string& prefix) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& path : ps.paths(prefix)) out[path] = ps.at(path).data();
  return out;
}

}  // namespace

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  ParameterStore<double> ps(1);
  auto& w = ps.create("w", {1}, vtgan::Init::zeros);
  w.mutable_data()[0] = 1.0;
  vtgan::AdamState<double> st;
  vtgan::TrainConfig cfg;  // lr 2e-4, beta1 0.5
  vtgan::sum_all(vtgan::mul(w, w)).backward();
  vtgan::adam_step(ps, {""}, st, cfg);
  EXPECT_NEAR(w.data()[0], 1.0 - cfg.lr, 1e-9);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersButAdvancesTime) {
  ParameterStore<double> ps(2);
  auto& w = ps.create("w", {3}, vtgan::Init::normal_002);
  auto before = w.data();
  vtgan::AdamState<double> st;
  vtgan::TrainConfig cfg;
  auto zero = Tensor<double>::zeros({3});
  vtgan::sum_all(vtgan::mul(w, zero)).backward();
  vtgan::adam_step(ps, {""}, st, cfg);
  EXPECT_EQ(w.data(), before);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, QuadraticDescentIsMonotone) {
  ParameterStore<double> ps(3);
  auto& w = ps.create("w", {1}, vtgan::Init::zeros);
  w.mutable_data()[0] = 1.0;
  vtgan::AdamState<double> st;
  vtgan::TrainConfig cfg;
  double prev = 1.0;
  for (int step = 0; step < 200; ++step) {
    ps.zero_grads();
    vtgan::sum_all(vtgan::mul(w, w)).backward();
    vtgan::adam_step(ps, {""}, st, cfg);
    double now = std::abs(w.data()[0]);
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Adam, MissingGradAndFrozenParams) {
  ParameterStore<double> ps(4);
  ps.create("a", {2}, vtgan::Init::normal_002);
  auto& b = ps.create("b", {2}, vtgan::Init::normal_002);
  vtgan::AdamState<double> st;
  vtgan::TrainConfig cfg;
  vtgan::sum_all(vtgan::mul(b, b)).backward();
  EXPECT_THROW(vtgan::adam_step(ps, {""}, st, cfg), vtgan::Error);
  // freezing "a" removes the requirement and leaves it untouched
  ps.set_trainable("a", false);
  auto a_before = ps.at("a").data();
  vtgan::adam_step(ps, {""}, st, cfg);
  EXPECT_EQ(ps.at("a").data(), a_before);
}

TEST(MakeBatch, ShapesAndOneHotOrder) {
  auto p1 = desk_pair("a", Label::abnormal, 1);
  auto p2 = desk_pair("b", Label::normal, 2);
  auto batch = vtgan::make_batch<double>({p1, p2});
  EXPECT_EQ(batch.fundus.shape(), (vtgan::Shape{2, 64, 64, 3}));
  EXPECT_EQ(batch.angio.shape(), (vtgan::Shape{2, 64, 64, 1}));
  EXPECT_EQ(batch.labels.shape(), (vtgan::Shape{2, 2}));
  // order [Abnormal, Normal]
  EXPECT_DOUBLE_EQ(batch.labels.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(batch.labels.data()[1], 0.0);
  EXPECT_DOUBLE_EQ(batch.labels.data()[2], 0.0);
  EXPECT_DOUBLE_EQ(batch.labels.data()[3], 1.0);
}

TEST(TrainerSteps, DiscriminatorStepIsolatesGenerators) {
  auto cfg = desk_run_config();
  ParameterStore<double> ps(cfg.seed);
  vtgan::build_vtgan(ps, cfg.gan);
  Trainer<double> trainer(ps, cfg);
  auto batch = vtgan::make_batch<double>(
      {desk_pair("a", Label::abnormal, 3), desk_pair("b", Label::normal, 4)});

  auto g_before = snapshot(ps, "g_");
  auto d = trainer.discriminator_step(batch);
  EXPECT_TRUE(std::isfinite(d.total));
  for (const auto& [path, data] : snapshot(ps, "g_"))
    EXPECT_EQ(data, g_before.at(path)) << path;

  // every trainable VT weight received a gradient
  for (const auto& path : ps.paths("vt_")) {
    if (ps.kind(path) != vtgan::ParamKind::weight) continue;
    ASSERT_TRUE(ps.at(path).has_grad()) << path;
    double mag = 0;
    for (double g : ps.at(path).grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << "no gradient signal at " << path;
  }
}

TEST(TrainerSteps, GeneratorStepFreezesDiscriminatorsAndBalancesBooks) {
  auto cfg = desk_run_config();
  ParameterStore<double> ps(cfg.seed);
  vtgan::build_vtgan(ps, cfg.gan);
  Trainer<double> trainer(ps, cfg);
  auto batch = vtgan::make_batch<double>(
      {desk_pair("a", Label::abnormal, 5), desk_pair("b", Label::normal, 6)});

  auto vt_before = snapshot(ps, "vt_");
  auto g = trainer.generator_step(batch);
  for (const auto& [path, data] : snapshot(ps, "vt_"))
    EXPECT_EQ(data, vt_before.at(path)) << path;
  // discriminators stay trainable after the step
  EXPECT_TRUE(ps.trainable("vt_fine.embed.proj"));

  const auto& w = cfg.weights;
  double expected =
      w.adv * g.adv + w.mse * g.mse + w.perc * g.perc + w.ef * g.ef;
  EXPECT_NEAR(g.total, expected, 1e-6);
}

TEST(TrainerSteps, CycleIsDeterministicAcrossFreshRuns) {
  auto run_once = [&](std::uint64_t seed) {
    auto cfg = desk_run_config(seed);
    ParameterStore<double> ps(seed);
    vtgan::build_vtgan(ps, cfg.gan);
    Trainer<double> trainer(ps, cfg);
    std::vector<FundusAngioPair<double>> pairs = {
        desk_pair("a", Label::abnormal, 7), desk_pair("b", Label::normal, 8)};
    auto batch = vtgan::make_batch<double>(pairs);
    auto sample = [&](std::uint64_t) { return batch; };
    std::vector<double> history;
    for (int i = 0; i < 3; ++i) {
      auto [d, g] = trainer.cycle(batch, sample);
      history.push_back(d.total);
      history.push_back(g.total);
    }
    return history;
  };
  auto a = run_once(11);
  auto b = run_once(11);
  EXPECT_EQ(a, b);
  auto c = run_once(12);
  EXPECT_NE(a, c);
}

TEST(TrainerRun, OneEpochSmokeWithLogAndCheckpoints) {
  namespace fs = std::filesystem;
  std::string out = testing::TempDir() + "trainer_run";
  fs::remove_all(out);
  auto cfg = desk_run_config();
  cfg.train.epochs = 1;
  ParameterStore<double> ps(cfg.seed);
  vtgan::build_vtgan(ps, cfg.gan);
  Trainer<double> trainer(ps, cfg);

  std::vector<FundusAngioPair<double>> pairs;
  for (int i = 0; i < 4; ++i)
    pairs.push_back(desk_pair("p" + std::to_string(i),
                              i % 2 ? Label::normal : Label::abnormal,
                              20 + i));
  trainer.run(pairs.size(), [&](std::size_t i) { return pairs[i]; }, out);

  EXPECT_TRUE(fs::exists(out + "/train_log.jsonl"));
  EXPECT_TRUE(fs::exists(out + "/latest.weights.vtgw"));
  EXPECT_TRUE(fs::exists(out + "/epoch1.weights.vtgw"));
  EXPECT_TRUE(fs::exists(out + "/best.weights.vtgw"));

  std::ifstream log(out + "/train_log.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  auto header = vtgan::json::parse(line);
  EXPECT_EQ(header.at("config").at("train").at("batch").get<int>(), 2);
  int steps = 0;
  while (std::getline(log, line)) {
    auto j = vtgan::json::parse(line);
    for (const char* key : {"d_total", "g_total", "g_mse", "g_perc", "g_ef"})
      EXPECT_TRUE(std::isfinite(j.at(key).get<double>()));
    ++steps;
  }
  EXPECT_EQ(steps, 2);  // 4 pairs / batch 2
  fs::remove_all(out);
}

TEST(TrainerRun, PaperScaleConfigEchoesHyperparameters) {
  RunConfig cfg;  // full scale defaults
  auto j = cfg.to_json();
  EXPECT_EQ(j.at("train").at("epochs").get<int>(), 200);
  EXPECT_EQ(j.at("train").at("batch").get<int>(), 2);
  EXPECT_DOUBLE_EQ(j.at("train").at("lr").get<double>(), 0.0002);
  EXPECT_DOUBLE_EQ(j.at("train").at("beta1").get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j.at("loss_weights").at("adv").get<double>(), 10.0);
  EXPECT_DOUBLE_EQ(j.at("loss_weights").at("ef").get<double>(), 1.0);
}

TEST(TrainerRun, ResumeReproducesLossesBitwise) {
  namespace fs = std::filesystem;
  std::string out = testing::TempDir() + "trainer_resume";
  fs::remove_all(out);
  fs::create_directories(out);
  auto cfg = desk_run_config(77);
  std::vector<FundusAngioPair<double>> pairs = {
      desk_pair("a", Label::abnormal, 30), desk_pair("b", Label::normal, 31)};
  auto batch = vtgan::make_batch<double>(pairs);
  auto sample = [&](std::uint64_t) { return batch; };

  ParameterStore<double> ps_a(cfg.seed);
  vtgan::build_vtgan(ps_a, cfg.gan);
  Trainer<double> a(ps_a, cfg);
  for (int i = 0; i < 2; ++i) a.cycle(batch, sample);
  a.save_checkpoint(out, "ckpt");

  std::vector<double> continued;
  for (int i = 0; i < 4; ++i) {
    auto [d, g] = a.cycle(batch, sample);
    continued.push_back(d.total);
    continued.push_back(g.total);
  }

  ParameterStore<double> ps_b(cfg.seed);
  vtgan::build_vtgan(ps_b, cfg.gan);
  Trainer<double> b(ps_b, cfg);
  b.load_checkpoint(out + "/ckpt");
  EXPECT_EQ(b.cycle_counter(), 2u);
  std::vector<double> resumed;
  for (int i = 0; i < 4; ++i) {
    auto [d, g] = b.cycle(batch, sample);
    resumed.push_back(d.total);
    resumed.push_back(g.total);
  }
  EXPECT_EQ(continued, resumed);
  fs::remove_all(out);
}

TEST(Checkpoint, WeightFileRoundTripIsBitwise) {
  auto cfg = desk_run_config();
  ParameterStore<double> ps(9);
  vtgan::build_vtgan(ps, cfg.gan);
  std::string path = testing::TempDir() + "weights_rt.vtgw";
  std::map<std::string, std::string> meta = {{"note", "round trip"}};
  vtgan::save_weights(ps, path, meta);

  ParameterStore<double> loaded(0);
  auto meta2 = vtgan::load_weights(loaded, path);
  EXPECT_EQ(meta2.at("note"), "round trip");
  auto paths = ps.paths();
  ASSERT_EQ(loaded.paths().size(), paths.size());
  for (const auto& p : paths) EXPECT_EQ(loaded.at(p).data(), ps.at(p).data());

  // second save is byte-identical
  std::string path2 = testing::TempDir() + "weights_rt2.vtgw";
  vtgan::save_weights(loaded, path2, meta);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  EXPECT_EQ(c1, c2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}
