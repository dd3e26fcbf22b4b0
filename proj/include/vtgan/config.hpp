#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "vtgan/core.hpp"
#include "vtgan/discriminators.hpp"
#include "vtgan/generators.hpp"
#include "vtgan/losses.hpp"

namespace vtgan {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                                const std::string& where) {
  check<DataError>(j.is_object(), "config section '", where,
                   "' must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    check<DataError>(known.count(it.key()), "unknown config key '", it.key(),
                     "' in ", where);
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Architecture hyperparameters; the desk preset shrinks sizes and widths,
/// never topology.
struct GanConfig {
  std::size_t fine_size = 512;
  std::size_t base_channels = 64;
  std::size_t token_dim = 64;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::uint64_t extractor_seed = 1234;

  static GanConfig preset(const std::string& scale) {
    GanConfig c;
    if (scale == "full") return c;
    if (scale == "desk") {
      c.fine_size = 64;
      c.base_channels = 16;
      c.token_dim = 16;
      return c;
    }
    throw DataError("unknown scale preset: " + scale + " (use full or desk)");
  }

  GeneratorConfig generator_config() const {
    return {fine_size, base_channels};
  }

  VtConfig vt_config(bool fine) const {
    VtConfig v;
    v.image_size = fine ? fine_size : fine_size / 2;
    v.patch = v.image_size / 8;  // 64 tokens at every scale
    v.token_dim = token_dim;
    v.heads = heads;
    v.mlp_sizes = {2 * token_dim, token_dim};
    v.dropout = dropout;
    return v;
  }

  json to_json() const {
    return {{"fine_size", fine_size},     {"base_channels", base_channels},
            {"token_dim", token_dim},     {"heads", heads},
            {"dropout", dropout},         {"extractor_seed", extractor_seed}};
  }
  static GanConfig from_json(const json& j) {
    detail::reject_unknown_keys(j,
                                {"fine_size", "base_channels", "token_dim",
                                 "heads", "dropout", "extractor_seed"},
                                "gan");
    GanConfig c;
    detail::read_key(j, "fine_size", c.fine_size);
    detail::read_key(j, "base_channels", c.base_channels);
    detail::read_key(j, "token_dim", c.token_dim);
    detail::read_key(j, "heads", c.heads);
    detail::read_key(j, "dropout", c.dropout);
    detail::read_key(j, "extractor_seed", c.extractor_seed);
    return c;
  }
};

struct TrainConfig {
  double lr = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch = 2;
  std::size_t epochs = 200;
  std::size_t d_steps_per_g_step = 2;
  std::size_t checkpoint_every = 1;  // epochs

  void validate() const {
    check<DataError>(lr > 0 && beta1 > 0 && beta2 > 0 && eps > 0 &&
                         batch > 0 && epochs > 0 && d_steps_per_g_step > 0,
                     "train config values must be positive");
  }

  json to_json() const {
    return {{"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"batch", batch},
            {"epochs", epochs},
            {"d_steps_per_g_step", d_steps_per_g_step},
            {"checkpoint_every", checkpoint_every}};
  }
  static TrainConfig from_json(const json& j) {
    detail::reject_unknown_keys(
        j,
        {"lr", "beta1", "beta2", "eps", "batch", "epochs",
         "d_steps_per_g_step", "checkpoint_every"},
        "train");
    TrainConfig c;
    detail::read_key(j, "lr", c.lr);
    detail::read_key(j, "beta1", c.beta1);
    detail::read_key(j, "beta2", c.beta2);
    detail::read_key(j, "eps", c.eps);
    detail::read_key(j, "batch", c.batch);
    detail::read_key(j, "epochs", c.epochs);
    detail::read_key(j, "d_steps_per_g_step", c.d_steps_per_g_step);
    detail::read_key(j, "checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
  }
};

inline json loss_weights_to_json(const LossWeights& w) {
  return {{"adv", w.adv}, {"mse", w.mse}, {"perc", w.perc}, {"ef", w.ef},
          {"cce", w.cce}};
}

inline LossWeights loss_weights_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"adv", "mse", "perc", "ef", "cce"},
                              "loss_weights");
  LossWeights w;
  detail::read_key(j, "adv", w.adv);
  detail::read_key(j, "mse", w.mse);
  detail::read_key(j, "perc", w.perc);
  detail::read_key(j, "ef", w.ef);
  detail::read_key(j, "cce", w.cce);
  check<DataError>(w.adv >= 0 && w.mse >= 0 && w.perc >= 0 && w.ef >= 0 &&
                       w.cce >= 0,
                   "loss weights must be nonnegative");
  return w;
}

/// Default distortion strengths, one per kind; all configurable.
struct DistortionDefaults {
  double blur_sigma = 2.0;
  double sharp_amount = 1.0;
  double noise_sigma = 0.05;
  double pinch_factor = 0.3;
  double whirl_degrees = 30.0;

  json to_json() const {
    return {{"blur_sigma", blur_sigma},
            {"sharp_amount", sharp_amount},
            {"noise_sigma", noise_sigma},
            {"pinch_factor", pinch_factor},
            {"whirl_degrees", whirl_degrees}};
  }
  static DistortionDefaults from_json(const json& j) {
    detail::reject_unknown_keys(j,
                                {"blur_sigma", "sharp_amount", "noise_sigma",
                                 "pinch_factor", "whirl_degrees"},
                                "distortion");
    DistortionDefaults d;
    detail::read_key(j, "blur_sigma", d.blur_sigma);
    detail::read_key(j, "sharp_amount", d.sharp_amount);
    detail::read_key(j, "noise_sigma", d.noise_sigma);
    detail::read_key(j, "pinch_factor", d.pinch_factor);
    detail::read_key(j, "whirl_degrees", d.whirl_degrees);
    return d;
  }
};

/// Full run configuration: the JSON-serialized union consumed by the CLI.
struct RunConfig {
  GanConfig gan;
  TrainConfig train;
  LossWeights weights;
  DistortionDefaults distortion;
  std::uint64_t seed = 42;
  std::string scale = "full";

  json to_json() const {
    return {{"gan", gan.to_json()},
            {"train", train.to_json()},
            {"loss_weights", loss_weights_to_json(weights)},
            {"distortion", distortion.to_json()},
            {"seed", seed},
            {"scale", scale}};
  }

  static RunConfig from_json(const json& j) {
    detail::reject_unknown_keys(
        j, {"gan", "train", "loss_weights", "distortion", "seed", "scale"},
        "run config");
    RunConfig c;
    if (j.contains("scale")) {
      c.scale = j.at("scale").get<std::string>();
      c.gan = GanConfig::preset(c.scale);
    }
    if (j.contains("gan")) {
      // preset first, explicit keys win
      json merged = c.gan.to_json();
      for (auto it = j.at("gan").begin(); it != j.at("gan").end(); ++it)
        merged[it.key()] = it.value();
      c.gan = GanConfig::from_json(merged);
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("loss_weights"))
      c.weights = loss_weights_from_json(j.at("loss_weights"));
    if (j.contains("distortion"))
      c.distortion = DistortionDefaults::from_json(j.at("distortion"));
    detail::read_key(j, "seed", c.seed);
    return c;
  }

  static RunConfig load(const std::string& filename) {
    std::ifstream in(filename);
    check<DataError>(in.good(), "cannot open config file: ", filename);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError(strcat_msg("bad JSON in ", filename, ": ", e.what()));
    }
    return from_json(j);
  }

  void save(const std::string& filename) const {
    std::ofstream out(filename);
    check<DataError>(out.good(), "cannot write config file: ", filename);
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace vtgan
