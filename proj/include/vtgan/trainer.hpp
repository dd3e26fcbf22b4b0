#pragma once

#include <chrono>
#include <iomanip>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vtgan/config.hpp"
#include "vtgan/data.hpp"
#include "vtgan/discriminators.hpp"
#include "vtgan/generators.hpp"
#include "vtgan/losses.hpp"
#include "vtgan/params.hpp"

namespace vtgan {

/// Builds every network of the system into one store.
template <typename T>
void build_vtgan(ParameterStore<T>& ps, const GanConfig& gan) {
  build_generators(ps, gan.generator_config());
  build_vt(ps, kVtFinePrefix, gan.vt_config(true));
  build_vt(ps, kVtCoarsePrefix, gan.vt_config(false));
}

// ---------------------------------- Adam -----------------------------------

template <typename T>
struct AdamState {
  std::map<std::string, std::vector<T>> m, v;
  std::uint64_t t = 0;
};

/// Bias-corrected Adam over the trainable weights under the given prefixes.
/// Frozen weights and state entries are untouched; a trainable weight
/// without a gradient is an error.
template <typename T>
void adam_step(ParameterStore<T>& ps, const std::vector<std::string>& prefixes,
               AdamState<T>& st, const TrainConfig& cfg) {
  ++st.t;
  T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  T bias1 = T(1) - static_cast<T>(std::pow(cfg.beta1, st.t));
  T bias2 = T(1) - static_cast<T>(std::pow(cfg.beta2, st.t));
  for (const auto& prefix : prefixes)
    for (const auto& path : ps.paths(prefix)) {
      if (ps.kind(path) != ParamKind::weight) continue;
      Tensor<T>& p = ps.at(path);
      if (!p.requires_grad()) continue;  // frozen
      check<Error>(p.has_grad(), "missing gradient on trainable parameter ",
                   path);
      const auto& g = p.grad();
      auto& m = st.m[path];
      auto& v = st.v[path];
      if (m.empty()) m.assign(p.size(), T(0));
      if (v.empty()) v.assign(p.size(), T(0));
      auto& data = p.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        T m_hat = m[i] / bias1;
        T v_hat = v[i] / bias2;
        data[i] -= static_cast<T>(cfg.lr) * m_hat /
                   (std::sqrt(v_hat) + static_cast<T>(cfg.eps));
      }
    }
}

// --------------------------------- batches ---------------------------------

template <typename T>
struct Batch {
  Tensor<T> fundus;  // B x F x F x 3
  Tensor<T> angio;   // B x F x F x 1
  Tensor<T> labels;  // B x 2, one-hot [Abnormal, Normal]
};

template <typename T>
Batch<T> make_batch(const std::vector<FundusAngioPair<T>>& pairs) {
  check<Error>(!pairs.empty(), "empty batch");
  std::size_t b = pairs.size();
  std::size_t h = pairs[0].fundus.dim(0), w = pairs[0].fundus.dim(1);
  std::vector<T> fundus(b * h * w * 3), angio(b * h * w), labels(b * 2, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    pairs[i].validate();
    check<ShapeError>(pairs[i].fundus.dim(0) == h && pairs[i].fundus.dim(1) == w,
                      "ragged batch: ", shape_str(pairs[i].fundus.shape()));
    std::copy(pairs[i].fundus.data().begin(), pairs[i].fundus.data().end(),
              fundus.begin() + static_cast<std::ptrdiff_t>(i * h * w * 3));
    std::copy(pairs[i].angio.data().begin(), pairs[i].angio.data().end(),
              angio.begin() + static_cast<std::ptrdiff_t>(i * h * w));
    labels[i * 2 + (pairs[i].label == Label::normal ? 1 : 0)] = T(1);
  }
  return {Tensor<T>::from_data({b, h, w, 3}, std::move(fundus)),
          Tensor<T>::from_data({b, h, w, 1}, std::move(angio)),
          Tensor<T>::from_data({b, 2}, std::move(labels))};
}

// --------------------------------- trainer ---------------------------------

struct DiscriminatorLosses {
  double hinge_fine = 0, hinge_coarse = 0, cce = 0, total = 0;
};

struct GeneratorLosses {
  double adv = 0, mse = 0, perc = 0, ef = 0, total = 0;
  double mse_fine = 0, mse_coarse = 0;  // per-scale parts of mse
};

/// Alternating semi-supervised training: per cycle, d_steps_per_g_step
/// discriminator updates on randomly sampled batches, then one generator
/// update with the discriminators frozen. All randomness is keyed by
/// (seed, counter), so runs replay and resume bit-identically.
template <typename T>
class Trainer {
 public:
  Trainer(ParameterStore<T>& store, const RunConfig& cfg)
      : store_(store), cfg_(cfg),
        extractor_(CnnFeatureExtractor<T>::random_desk(cfg.gan.extractor_seed,
                                                       1)) {}

  DiscriminatorLosses discriminator_step(const Batch<T>& batch) {
    store_.zero_grads();
    auto gen_cfg = cfg_.gan.generator_config();
    auto vt_fine_cfg = cfg_.gan.vt_config(true);
    auto vt_coarse_cfg = cfg_.gan.vt_config(false);
    auto x_lo = lanczos_resize(batch.fundus, 2);
    auto y_lo = lanczos_resize(batch.angio, 2);

    Tensor<T> fa_fine, fa_coarse;
    {
      // synthesis only; no gradients flow into the generators
      NoGradGuard ng;
      auto syn = synthesize(store_, gen_cfg, batch.fundus, Mode::eval());
      fa_fine = syn.fine;
      fa_coarse = syn.coarse;
    }
    Mode mode = Mode::training(cfg_.seed, step_counter_);
    auto real_f = vt_forward(store_, kVtFinePrefix, vt_fine_cfg, batch.fundus,
                             batch.angio, mode);
    auto fake_f = vt_forward(store_, kVtFinePrefix, vt_fine_cfg, batch.fundus,
                             fa_fine, mode);
    auto real_c = vt_forward(store_, kVtCoarsePrefix, vt_coarse_cfg, x_lo,
                             y_lo, mode);
    auto fake_c = vt_forward(store_, kVtCoarsePrefix, vt_coarse_cfg, x_lo,
                             fa_coarse, mode);

    auto hinge_fine = hinge_d(real_f.adv_map, fake_f.adv_map);
    auto hinge_coarse = hinge_d(real_c.adv_map, fake_c.adv_map);
    // CCE on real labeled pairs only (semi-supervision scope)
    auto cce_term = add(cce(batch.labels, real_f.class_probs),
                        cce(batch.labels, real_c.class_probs));
    auto total = add(add(hinge_fine, hinge_coarse),
                     mul_scalar(cce_term, static_cast<T>(cfg_.weights.cce)));

    DiscriminatorLosses out{hinge_fine.item(), hinge_coarse.item(),
                            cce_term.item(), total.item()};
    ensure_finite(out.hinge_fine, "d_hinge_fine");
    ensure_finite(out.hinge_coarse, "d_hinge_coarse");
    ensure_finite(out.cce, "d_cce");
    total.backward();
    adam_step(store_, {kVtFinePrefix, kVtCoarsePrefix}, adam_d_, cfg_.train);
    ++step_counter_;
    return out;
  }

  GeneratorLosses generator_step(const Batch<T>& batch) {
    store_.zero_grads();
    auto gen_cfg = cfg_.gan.generator_config();
    auto vt_fine_cfg = cfg_.gan.vt_config(true);
    auto vt_coarse_cfg = cfg_.gan.vt_config(false);
    FreezeGuard<T> freeze_f(store_, kVtFinePrefix);
    FreezeGuard<T> freeze_c(store_, kVtCoarsePrefix);

    Mode mode = Mode::training(cfg_.seed, step_counter_);
    auto syn = synthesize(store_, gen_cfg, batch.fundus, mode);
    auto x_lo = lanczos_resize(batch.fundus, 2);
    auto y_lo = lanczos_resize(batch.angio, 2);

    auto fake_f = vt_forward(store_, kVtFinePrefix, vt_fine_cfg, batch.fundus,
                             syn.fine, mode);
    auto fake_c = vt_forward(store_, kVtCoarsePrefix, vt_coarse_cfg, x_lo,
                             syn.coarse, mode);

    GeneratorLossParts<T> parts;
    parts.adv = add(hinge_g(fake_f.adv_map), hinge_g(fake_c.adv_map));
    auto mse_fine = mse(syn.fine, batch.angio);
    auto mse_coarse = mse(syn.coarse, y_lo);
    parts.mse = add(mse_fine, mse_coarse);
    parts.perc = add(perceptual(syn.fine, batch.angio, extractor_),
                     perceptual(syn.coarse, y_lo, extractor_));
    parts.ef =
        add(embedding_feature_loss(store_, kVtFinePrefix, vt_fine_cfg,
                                   batch.fundus, batch.angio, syn.fine, mode),
            embedding_feature_loss(store_, kVtCoarsePrefix, vt_coarse_cfg,
                                   x_lo, y_lo, syn.coarse, mode));
    auto total = total_generator_objective(parts, cfg_.weights);

    GeneratorLosses out{parts.adv->item(), parts.mse->item(),
                        parts.perc->item(), parts.ef->item(), total.item(),
                        mse_fine.item(), mse_coarse.item()};
    ensure_finite(out.adv, "g_adv");
    ensure_finite(out.mse, "g_mse");
    ensure_finite(out.perc, "g_perc");
    ensure_finite(out.ef, "g_ef");
    total.backward();
    adam_step(store_, {kCoarsePrefix, kFinePrefix}, adam_g_, cfg_.train);
    ++step_counter_;
    return out;
  }

  /// One alternating cycle: d_steps_per_g_step discriminator updates on
  /// randomly sampled batches, then a generator update on `batch`.
  std::pair<DiscriminatorLosses, GeneratorLosses> cycle(
      const Batch<T>& batch,
      const std::function<Batch<T>(std::uint64_t rep_key)>& sample_d_batch) {
    DiscriminatorLosses d{};
    for (std::size_t rep = 0; rep < cfg_.train.d_steps_per_g_step; ++rep)
      d = discriminator_step(
          sample_d_batch(fold(fold(cfg_.seed, cycle_counter_), rep)));
    GeneratorLosses g = generator_step(batch);
    ++cycle_counter_;
    return {d, g};
  }

  /// Epoch loop over a dataset accessor; logs JSONL and checkpoints per
  /// epoch plus a best-MSE snapshot.
  void run(std::size_t dataset_size,
           const std::function<FundusAngioPair<T>(std::size_t)>& get,
           const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);
    check<DataError>(log.good(), "cannot open run log in ", out_dir);
    if (epoch_ == 0 && step_counter_ == 0) {
      json header = {{"config", cfg_.to_json()},
                     {"dataset_size", dataset_size}};
      log << header.dump() << "\n";
    }
    check<DataError>(dataset_size >= cfg_.train.batch, "dataset of ",
                     dataset_size, " smaller than batch ", cfg_.train.batch);

    auto sample_batch = [&](std::uint64_t key) {
      CounterRng rng(key, "dsample");
      std::vector<FundusAngioPair<T>> picked;
      for (std::size_t i = 0; i < cfg_.train.batch; ++i)
        picked.push_back(get(rng.next_below(dataset_size)));
      return make_batch(picked);
    };

    auto t0 = std::chrono::steady_clock::now();
    while (epoch_ < cfg_.train.epochs) {
      std::vector<std::size_t> order(dataset_size);
      std::iota(order.begin(), order.end(), 0);
      CounterRng shuffle_rng(fold(cfg_.seed, epoch_), "shuffle");
      for (std::size_t i = dataset_size; i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

      // full batches only: batch statistics need >= 2 samples
      for (std::size_t start = 0;
           start + cfg_.train.batch <= dataset_size;
           start += cfg_.train.batch) {
        std::vector<FundusAngioPair<T>> picked;
        for (std::size_t i = 0; i < cfg_.train.batch; ++i)
          picked.push_back(get(order[start + i]));
        auto [d, g] = cycle(make_batch(picked), sample_batch);

        auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        json line = {{"step", cycle_counter_},
                     {"epoch", epoch_ + 1},
                     {"d_hinge_fine", d.hinge_fine},
                     {"d_hinge_coarse", d.hinge_coarse},
                     {"d_cce", d.cce},
                     {"d_total", d.total},
                     {"g_adv", g.adv},
                     {"g_mse", g.mse},
                     {"g_mse_fine", g.mse_fine},
                     {"g_perc", g.perc},
                     {"g_ef", g.ef},
                     {"g_total", g.total},
                     {"wall_ms", wall}};
        log << line.dump() << "\n";
        log.flush();
        if (g.mse < best_mse_) {
          best_mse_ = g.mse;
          save_checkpoint(out_dir, "best");
        }
      }
      ++epoch_;
      if (epoch_ % cfg_.train.checkpoint_every == 0)
        save_checkpoint(out_dir, "epoch" + std::to_string(epoch_));
      save_checkpoint(out_dir, "latest");
    }
  }

  void save_checkpoint(const std::string& dir, const std::string& tag) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::string prefix = dir + "/" + tag;
    save_weights(store_, prefix + ".weights.vtgw");
    ParameterStore<T> opt;
    auto dump_state = [&](const char* name, const AdamState<T>& st) {
      for (const auto& [path, m] : st.m)
        opt.create(std::string(name) + ".m." + path, {m.size()}, Init::zeros)
            .mutable_data() = m;
      for (const auto& [path, v] : st.v)
        opt.create(std::string(name) + ".v." + path, {v.size()}, Init::zeros)
            .mutable_data() = v;
    };
    dump_state("adam_g", adam_g_);
    dump_state("adam_d", adam_d_);
    std::map<std::string, std::string> meta;
    meta["adam_g_t"] = std::to_string(adam_g_.t);
    meta["adam_d_t"] = std::to_string(adam_d_.t);
    meta["step_counter"] = std::to_string(step_counter_);
    meta["cycle_counter"] = std::to_string(cycle_counter_);
    meta["epoch"] = std::to_string(epoch_);
    meta["best_mse"] = strcat_msg(std::setprecision(17), best_mse_);
    save_weights(opt, prefix + ".optim.vtgw", meta);
    cfg_.save(prefix + ".config.json");
  }

  /// Restores weights, optimizer moments and counters; continuation is
  /// bit-identical to an uninterrupted run with the same seed.
  void load_checkpoint(const std::string& prefix) {
    load_weights(store_, prefix + ".weights.vtgw");
    ParameterStore<T> opt;
    auto meta = load_weights(opt, prefix + ".optim.vtgw");
    auto restore = [&](const char* name, AdamState<T>& st) {
      st.m.clear();
      st.v.clear();
      std::string m_prefix = std::string(name) + ".m.";
      std::string v_prefix = std::string(name) + ".v.";
      for (const auto& path : opt.paths(std::string(name) + "."))
        if (path.rfind(m_prefix, 0) == 0)
          st.m[path.substr(m_prefix.size())] = opt.at(path).data();
        else if (path.rfind(v_prefix, 0) == 0)
          st.v[path.substr(v_prefix.size())] = opt.at(path).data();
    };
    restore("adam_g", adam_g_);
    restore("adam_d", adam_d_);
    adam_g_.t = std::stoull(meta.at("adam_g_t"));
    adam_d_.t = std::stoull(meta.at("adam_d_t"));
    step_counter_ = std::stoull(meta.at("step_counter"));
    cycle_counter_ = std::stoull(meta.at("cycle_counter"));
    epoch_ = std::stoull(meta.at("epoch"));
    if (meta.count("best_mse")) best_mse_ = std::stod(meta.at("best_mse"));
  }

  std::uint64_t step_counter() const { return step_counter_; }
  std::uint64_t cycle_counter() const { return cycle_counter_; }
  std::size_t epoch() const { return epoch_; }
  const FeatureExtractor<T>& extractor() const { return extractor_; }

 private:
  void ensure_finite(double v, const char* term) const {
    check<NumericError>(std::isfinite(v), "loss term ", term,
                        " is non-finite at step ", step_counter_);
  }

  ParameterStore<T>& store_;
  RunConfig cfg_;
  CnnFeatureExtractor<T> extractor_;
  AdamState<T> adam_g_, adam_d_;
  std::uint64_t step_counter_ = 0;
  std::uint64_t cycle_counter_ = 0;
  std::size_t epoch_ = 0;
  double best_mse_ = std::numeric_limits<double>::infinity();
};

}  // namespace vtgan
