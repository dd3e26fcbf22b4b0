#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vtgan/core.hpp"
#include "vtgan/discriminators.hpp"
#include "vtgan/ops.hpp"
#include "vtgan/params.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

/// Weight multipliers of the total objective.
struct LossWeights {
  double adv = 10.0;
  double mse = 10.0;
  double perc = 10.0;
  double ef = 1.0;
  double cce = 10.0;
};

// --------------------------- adversarial terms -----------------------------

/// Hinge discriminator loss: -E[min(0, -1 + real)] - E[min(0, -1 - fake)],
/// expectations as means over map elements and batch.
template <typename T>
Tensor<T> hinge_d(const Tensor<T>& real_map, const Tensor<T>& fake_map) {
  check_same_shape(real_map, fake_map, "hinge_d");
  auto real_term = neg(mean_all(min_zero(add_scalar(real_map, T(-1)))));
  auto fake_term = neg(mean_all(min_zero(add_scalar(neg(fake_map), T(-1)))));
  return add(real_term, fake_term);
}

/// Hinge generator loss: -E[fake].
template <typename T>
Tensor<T> hinge_g(const Tensor<T>& fake_map) {
  return neg(mean_all(fake_map));
}

/// d_loss + lambda_adv * g_loss.
template <typename T>
Tensor<T> combined_adversarial(const Tensor<T>& d_loss, const Tensor<T>& g_loss,
                               T lambda_adv) {
  return add(d_loss, mul_scalar(g_loss, lambda_adv));
}

// ------------------------- supervised/feature terms ------------------------

/// Categorical cross-entropy for 2-class one-hot targets, averaged over the
/// batch; predictions are clipped to [1e-7, 1 - 1e-7] before the log.
template <typename T>
Tensor<T> cce(const Tensor<T>& y_true, const Tensor<T>& y_pred) {
  Tensor<T> yt = y_true.rank() == 1 ? reshape(y_true, {1, y_true.dim(0)})
                                    : y_true;
  Tensor<T> yp = y_pred.rank() == 1 ? reshape(y_pred, {1, y_pred.dim(0)})
                                    : y_pred;
  check_same_shape(yt, yp, "cce");
  std::size_t b = yp.dim(0), k = yp.dim(1);
  for (std::size_t r = 0; r < b; ++r) {
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) s += yp.data()[r * k + j];
    check<NumericError>(std::abs(static_cast<double>(s) - 1.0) < 1e-3,
                        "cce prediction row ", r, " is not on the simplex (sum ",
                        s, ")");
  }
  auto clipped = clip(yp, static_cast<T>(1e-7), static_cast<T>(1.0 - 1e-7));
  auto per_elem = mul(yt, log_val(clipped));
  return mul_scalar(sum_all(per_elem), -T(1) / static_cast<T>(b));
}

/// Mean squared error.
template <typename T>
Tensor<T> mse(const Tensor<T>& fake, const Tensor<T>& real) {
  check_same_shape(fake, real, "mse");
  auto d = sub(fake, real);
  return mean_all(mul(d, d));
}

// --------------------------- feature extractors ----------------------------

/// Fixed (non-trainable) network mapping an image batch to a list of feature
/// tensors. Deterministic; gradients flow through the image argument only.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Tensor<T>> features(const Tensor<T>& images) const = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::string id() const = 0;
};

/// Trivial P=1 extractor (features = input); the mean-absolute-error case.
template <typename T>
class IdentityExtractor final : public FeatureExtractor<T> {
 public:
  explicit IdentityExtractor(std::size_t channels = 1) : channels_(channels) {}
  std::vector<Tensor<T>> features(const Tensor<T>& images) const override {
    return {images};
  }
  std::size_t in_channels() const override { return channels_; }
  std::string id() const override { return "identity"; }

 private:
  std::size_t channels_;
};

/// Stack of conv / max-pool layers with tap markers. Covers both the desk
/// extractor (fixed-seed random weights) and externally converted weight
/// files that follow a VGG-style conv/pool layout.
template <typename T>
class CnnFeatureExtractor final : public FeatureExtractor<T> {
 public:
  struct Layer {
    enum class Kind { conv, maxpool } kind = Kind::conv;
    std::size_t stride = 1;
    bool relu = true;
    bool tap = false;
    Tensor<T> w;  // [k,k,ci,co] for conv
    Tensor<T> b;  // [co]
  };

  CnnFeatureExtractor(std::vector<Layer> layers, std::size_t in_channels,
                      std::string id)
      : layers_(std::move(layers)), in_channels_(in_channels),
        id_(std::move(id)) {}

  std::vector<Tensor<T>> features(const Tensor<T>& images) const override {
    Tensor<T> x = adapt_channels(images);
    std::vector<Tensor<T>> taps;
    for (const auto& layer : layers_) {
      if (layer.kind == Layer::Kind::maxpool) {
        x = maxpool2d(x);
      } else {
        x = conv2d(x, layer.w, std::optional<Tensor<T>>(layer.b), layer.stride,
                   1, Padding::same);
        if (layer.relu) x = leaky_relu(x, T(0));
      }
      if (layer.tap) taps.push_back(x);
    }
    check<Error>(!taps.empty(), "feature extractor has no tap layers");
    return taps;
  }

  std::size_t in_channels() const override { return in_channels_; }
  std::string id() const override { return id_; }

  /// Desk-scale default: three stride-2 convs (ci -> 16 -> 32 -> 64) with a
  /// tap after each, weights drawn once from the given seed.
  static CnnFeatureExtractor random_desk(std::uint64_t seed,
                                         std::size_t in_channels) {
    CounterRng rng(seed, "feature_extractor");
    std::vector<Layer> layers;
    std::size_t ci = in_channels;
    for (std::size_t co : {std::size_t{16}, std::size_t{32}, std::size_t{64}}) {
      Layer l;
      l.stride = 2;
      l.tap = true;
      std::vector<T> w(3 * 3 * ci * co);
      // He-style scale keeps activations in range through the stack
      double std_dev = std::sqrt(2.0 / static_cast<double>(3 * 3 * ci));
      for (auto& v : w) v = static_cast<T>(std_dev * rng.next_normal());
      l.w = Tensor<T>::from_data({3, 3, ci, co}, std::move(w));
      l.b = Tensor<T>::zeros({co});
      layers.push_back(std::move(l));
      ci = co;
    }
    return CnnFeatureExtractor(std::move(layers), in_channels,
                               "random_cnn_seed" + std::to_string(seed));
  }

  void save(const std::string& filename) const {
    ParameterStore<T> ps;
    std::string spec;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      std::string name = "layer" + std::to_string(i);
      if (l.kind == Layer::Kind::maxpool) {
        spec += name + ":maxpool";
      } else {
        spec += name + ":conv:s" + std::to_string(l.stride) +
                (l.relu ? ":relu" : ":linear");
        ps.create(name + ".w", l.w.shape(), Init::zeros).mutable_data() =
            l.w.data();
        ps.create(name + ".b", l.b.shape(), Init::zeros).mutable_data() =
            l.b.data();
      }
      if (l.tap) spec += ":tap";
      spec += ",";
    }
    if (!spec.empty()) spec.pop_back();
    std::map<std::string, std::string> meta;
    meta["extractor_id"] = id_;
    meta["in_channels"] = std::to_string(in_channels_);
    meta["layers"] = spec;
    save_weights(ps, filename, meta);
  }

  static CnnFeatureExtractor load(const std::string& filename) {
    ParameterStore<T> ps;
    auto meta = load_weights(ps, filename);
    check<DataError>(meta.count("layers") && meta.count("in_channels"),
                     "extractor file missing layer spec: ", filename);
    std::vector<Layer> layers;
    std::istringstream ss(meta["layers"]);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::vector<std::string> parts;
      std::istringstream ps2(item);
      std::string tok;
      while (std::getline(ps2, tok, ':')) parts.push_back(tok);
      check<DataError>(parts.size() >= 2, "bad extractor layer spec: ", item);
      Layer l;
      l.tap = !parts.empty() && parts.back() == "tap";
      if (parts[1] == "maxpool") {
        l.kind = Layer::Kind::maxpool;
      } else {
        check<DataError>(parts.size() >= 4, "bad conv layer spec: ", item);
        l.kind = Layer::Kind::conv;
        l.stride = std::stoull(parts[2].substr(1));
        l.relu = parts[3] == "relu";
        l.w = ps.at(parts[0] + ".w").detach();
        l.b = ps.at(parts[0] + ".b").detach();
      }
      layers.push_back(std::move(l));
    }
    return CnnFeatureExtractor(std::move(layers),
                               std::stoull(meta["in_channels"]),
                               meta.count("extractor_id")
                                   ? meta["extractor_id"]
                                   : filename);
  }

 private:
  Tensor<T> adapt_channels(const Tensor<T>& images) const {
    check<ShapeError>(images.rank() == 4, "extractor expects NHWC batch, got ",
                      shape_str(images.shape()));
    std::size_t c = images.dim(3);
    if (c == in_channels_) return images;
    if (c == 1 && in_channels_ == 3)
      return concat<T>({images, images, images}, 3);
    throw ShapeError(strcat_msg("extractor expects ", in_channels_,
                                " channels, got ", c));
  }

  std::vector<Layer> layers_;
  std::size_t in_channels_;
  std::string id_;
};

/// Perceptual loss: mean per-layer L1 distance between extractor features of
/// the real and synthesized images, averaged over the P tapped layers.
template <typename T>
Tensor<T> perceptual(const Tensor<T>& fake, const Tensor<T>& real,
                     const FeatureExtractor<T>& fx) {
  check_same_shape(fake, real, "perceptual");
  auto fake_feats = fx.features(fake);
  auto real_feats = fx.features(real);
  std::size_t p = fake_feats.size();
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < p; ++i)
    total = add(total, mean_all(abs_val(sub(real_feats[i], fake_feats[i]))));
  return mul_scalar(total, T(1) / static_cast<T>(p));
}

/// Embedding feature loss: mean per-tap L1 distance between discriminator
/// token features of (x, y) and (x, G(x)). The discriminator weights are
/// frozen for the duration of the call, so gradient reaches the generator
/// through G(x) only.
template <typename T>
Tensor<T> embedding_feature_loss(ParameterStore<T>& ps,
                                 const std::string& vt_prefix,
                                 const VtConfig& cfg, const Tensor<T>& x,
                                 const Tensor<T>& y, const Tensor<T>& g_x,
                                 const Mode& mode) {
  FreezeGuard<T> freeze(ps, vt_prefix);
  auto real_feats = embedding_features(ps, vt_prefix, cfg, x, y, mode);
  auto fake_feats = embedding_features(ps, vt_prefix, cfg, x, g_x, mode);
  std::size_t q = real_feats.size();
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < q; ++i)
    total = add(total, mean_all(abs_val(sub(real_feats[i], fake_feats[i]))));
  return mul_scalar(total, T(1) / static_cast<T>(q));
}

// ----------------------------- total objective -----------------------------

template <typename T>
struct GeneratorLossParts {
  std::optional<Tensor<T>> adv;   // hinge_g summed over scales
  std::optional<Tensor<T>> mse;   // per-scale MSE sum
  std::optional<Tensor<T>> perc;  // per-scale perceptual sum
  std::optional<Tensor<T>> ef;    // per-scale embedding feature sum
};

/// lambda_adv*adv + lambda_mse*mse + lambda_perc*perc + lambda_ef*ef.
/// Discriminator-side terms (hinge_d, cce) are applied in the discriminator
/// step, not here.
template <typename T>
Tensor<T> total_generator_objective(const GeneratorLossParts<T>& parts,
                                    const LossWeights& w) {
  check<Error>(parts.adv.has_value(), "missing generator loss part: adv");
  check<Error>(parts.mse.has_value(), "missing generator loss part: mse");
  check<Error>(parts.perc.has_value(), "missing generator loss part: perc");
  check<Error>(parts.ef.has_value(), "missing generator loss part: ef");
  auto total = mul_scalar(*parts.adv, static_cast<T>(w.adv));
  total = add(total, mul_scalar(*parts.mse, static_cast<T>(w.mse)));
  total = add(total, mul_scalar(*parts.perc, static_cast<T>(w.perc)));
  total = add(total, mul_scalar(*parts.ef, static_cast<T>(w.ef)));
  return total;
}

}  // namespace vtgan
