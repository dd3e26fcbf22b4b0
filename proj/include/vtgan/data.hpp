#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtgan/core.hpp"
#include "vtgan/image_io.hpp"
#include "vtgan/resample.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

// ----------------------------- labels & pairs ------------------------------

enum class Label { abnormal, normal };

inline std::string label_str(Label l) {
  return l == Label::normal ? "Normal" : "Abnormal";
}

inline Label label_from_string(const std::string& s) {
  if (s == "Normal" || s == "normal") return Label::normal;
  if (s == "Abnormal" || s == "abnormal") return Label::abnormal;
  throw DataError("unknown label: " + s);
}

/// One-hot with class order [Abnormal, Normal].
template <typename T>
Tensor<T> label_one_hot(Label l) {
  return Tensor<T>::from_data(
      {2}, l == Label::abnormal ? std::vector<T>{1, 0} : std::vector<T>{0, 1});
}

/// A registered fundus/angiogram pair with provenance of how it was cut.
template <typename T = double>
struct FundusAngioPair {
  Tensor<T> fundus;  // H x W x 3 in [-1,1]
  Tensor<T> angio;   // H x W x 1 in [-1,1]
  Label label = Label::normal;
  std::string patient_id;
  std::size_t crop_row = 0, crop_col = 0;
  bool flipped = false;
  int rotations = 0;  // multiples of 90 degrees

  void validate() const {
    check<ShapeError>(fundus.rank() == 3 && fundus.dim(2) == 3,
                      "fundus must be HxWx3, got ", shape_str(fundus.shape()));
    check<ShapeError>(angio.rank() == 3 && angio.dim(2) == 1,
                      "angiogram must be HxWx1, got ",
                      shape_str(angio.shape()));
    check<ShapeError>(fundus.dim(0) == angio.dim(0) &&
                          fundus.dim(1) == angio.dim(1),
                      "pair not spatially registered: ",
                      shape_str(fundus.shape()), " vs ",
                      shape_str(angio.shape()));
  }
};

// --------------------------- basic image surgery ---------------------------

template <typename T>
Tensor<T> crop_image(const Tensor<T>& img, std::size_t row, std::size_t col,
                     std::size_t size) {
  std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  check<ShapeError>(row + size <= h && col + size <= w, "crop ", size, "@(",
                    row, ",", col, ") exceeds image ", h, "x", w);
  std::vector<T> out(size * size * c);
  const auto& d = img.data();
  for (std::size_t y = 0; y < size; ++y)
    std::copy_n(&d[((row + y) * w + col) * c], size * c, &out[y * size * c]);
  return Tensor<T>::from_data({size, size, c}, std::move(out));
}

template <typename T>
Tensor<T> hflip_image(const Tensor<T>& img) {
  std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  std::vector<T> out(img.size());
  const auto& d = img.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      std::copy_n(&d[(y * w + x) * c], c, &out[(y * w + (w - 1 - x)) * c]);
  return Tensor<T>::from_data(img.shape(), std::move(out));
}

/// Counter-clockwise quarter turns; square images only.
template <typename T>
Tensor<T> rot90_image(const Tensor<T>& img, int quarter_turns) {
  std::size_t n = img.dim(0), c = img.dim(2);
  check<ShapeError>(img.dim(1) == n, "rotation needs a square image, got ",
                    shape_str(img.shape()));
  int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return img;
  std::vector<T> out(img.size());
  const auto& d = img.data();
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      std::size_t sy = y, sx = x;
      // destination (y,x) <- source rotated k quarter turns
      for (int t = 0; t < k; ++t) {
        std::size_t ny = sx, nx = n - 1 - sy;
        sy = ny;
        sx = nx;
      }
      std::copy_n(&d[(sy * n + sx) * c], c, &out[(y * n + x) * c]);
    }
  return Tensor<T>::from_data(img.shape(), std::move(out));
}

// ------------------------------ crop sampling ------------------------------

/// `count` crops at seeded uniform origins, the same origin applied to the
/// fundus and the angiogram.
template <typename T>
std::vector<FundusAngioPair<T>> extract_crops(const FundusAngioPair<T>& src,
                                              std::size_t crop = 512,
                                              std::size_t count = 50,
                                              std::uint64_t seed = 0) {
  src.validate();
  std::size_t h = src.fundus.dim(0), w = src.fundus.dim(1);
  check<ShapeError>(crop <= h && crop <= w, "crop size ", crop,
                    " exceeds source ", h, "x", w);
  CounterRng rng(fold(seed, hash_str(src.patient_id)), "crops");
  std::vector<FundusAngioPair<T>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t row = static_cast<std::size_t>(rng.next_below(h - crop + 1));
    std::size_t col = static_cast<std::size_t>(rng.next_below(w - crop + 1));
    FundusAngioPair<T> p;
    p.fundus = crop_image(src.fundus, row, col, crop);
    p.angio = crop_image(src.angio, row, col, crop);
    p.label = src.label;
    p.patient_id = src.patient_id;
    p.crop_row = row;
    p.crop_col = col;
    out.push_back(std::move(p));
  }
  return out;
}

/// The four corner-anchored crops used for test pairs.
template <typename T>
std::vector<FundusAngioPair<T>> quadrant_crops(const FundusAngioPair<T>& src,
                                               std::size_t crop = 512) {
  src.validate();
  std::size_t h = src.fundus.dim(0), w = src.fundus.dim(1);
  check<ShapeError>(h >= crop && w >= crop, "source ", h, "x", w,
                    " smaller than quadrant crop ", crop);
  std::vector<FundusAngioPair<T>> out;
  for (auto [row, col] : {std::pair<std::size_t, std::size_t>{0, 0},
                          {0, w - crop},
                          {h - crop, 0},
                          {h - crop, w - crop}}) {
    FundusAngioPair<T> p;
    p.fundus = crop_image(src.fundus, row, col, crop);
    p.angio = crop_image(src.angio, row, col, crop);
    p.label = src.label;
    p.patient_id = src.patient_id;
    p.crop_row = row;
    p.crop_col = col;
    out.push_back(std::move(p));
  }
  return out;
}

namespace detail {

template <typename T>
FundusAngioPair<T> augment_pair(const FundusAngioPair<T>& src, bool flip,
                                int rot) {
  FundusAngioPair<T> p = src;
  if (flip) {
    p.fundus = hflip_image(p.fundus);
    p.angio = hflip_image(p.angio);
  }
  if (rot) {
    p.fundus = rot90_image(p.fundus, rot);
    p.angio = rot90_image(p.angio, rot);
  }
  p.flipped = flip;
  p.rotations = rot;
  return p;
}

/// Seeded non-identity transform: horizontal flip and/or 90-degree turns.
inline std::pair<bool, int> pick_augmentation(CounterRng& rng) {
  // 7 non-identity members of the flip x rotation group
  std::uint64_t pick = 1 + rng.next_below(7);
  return {pick >= 4, static_cast<int>(pick % 4)};
}

}  // namespace detail

/// Augments the minority class with seeded flips/rotations until both
/// classes reach `target_per_class`.
template <typename T>
std::vector<FundusAngioPair<T>> balance_classes(
    std::vector<FundusAngioPair<T>> pairs, std::size_t target_per_class,
    std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < pairs.size(); ++i)
    by_class[pairs[i].label == Label::normal ? 1 : 0].push_back(i);
  check<Error>(target_per_class >= by_class[0].size() &&
                   target_per_class >= by_class[1].size(),
               "balance target ", target_per_class,
               " below existing class count");
  CounterRng rng(seed, "balance");
  for (int cls = 0; cls < 2; ++cls) {
    const auto& idx = by_class[cls];
    if (idx.empty()) continue;
    std::size_t need = target_per_class - idx.size();
    for (std::size_t i = 0; i < need; ++i) {
      const auto& src = pairs[idx[i % idx.size()]];
      auto [flip, rot] = detail::pick_augmentation(rng);
      pairs.push_back(detail::augment_pair(src, flip, rot));
    }
  }
  return pairs;
}

// ------------------------------- distortions -------------------------------

enum class DistortionKind { blur, sharp, noise, pinch, whirl };

inline const std::vector<DistortionKind>& all_distortions() {
  static const std::vector<DistortionKind> kinds = {
      DistortionKind::blur, DistortionKind::sharp, DistortionKind::noise,
      DistortionKind::pinch, DistortionKind::whirl};
  return kinds;
}

inline std::string distortion_str(DistortionKind k) {
  switch (k) {
    case DistortionKind::blur: return "blur";
    case DistortionKind::sharp: return "sharp";
    case DistortionKind::noise: return "noise";
    case DistortionKind::pinch: return "pinch";
    case DistortionKind::whirl: return "whirl";
  }
  return "?";
}

inline DistortionKind distortion_from_string(const std::string& s) {
  for (DistortionKind k : all_distortions())
    if (distortion_str(k) == s) return k;
  throw DataError("unknown distortion kind: " + s);
}

/// strength semantics per kind: blur = gaussian sigma (px), sharp = unsharp
/// amount, noise = additive gaussian sigma in [-1,1] units, pinch = radial
/// exponent, whirl = max angle in degrees at the center.
struct DistortionSpec {
  DistortionKind kind = DistortionKind::blur;
  double strength = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    switch (kind) {
      case DistortionKind::blur:
        check<DataError>(strength >= 0 && strength <= 10,
                         "blur sigma out of range [0,10]: ", strength);
        break;
      case DistortionKind::sharp:
        check<DataError>(strength >= 0 && strength <= 5,
                         "sharp amount out of range [0,5]: ", strength);
        break;
      case DistortionKind::noise:
        check<DataError>(strength >= 0 && strength <= 1,
                         "noise sigma out of range [0,1]: ", strength);
        break;
      case DistortionKind::pinch:
        check<DataError>(strength >= 0 && strength <= 0.95,
                         "pinch factor out of range [0,0.95]: ", strength);
        break;
      case DistortionKind::whirl:
        check<DataError>(strength >= -180 && strength <= 180,
                         "whirl angle out of range [-180,180]: ", strength);
        break;
    }
  }
};

namespace detail {

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& img, double sigma) {
  if (sigma <= 0.0) return img.detach();
  std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;  // constants map to themselves
  auto clamp = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(std::max<std::ptrdiff_t>(i, 0), n - 1));
  };
  const auto& d = img.data();
  std::vector<T> mid(img.size()), out(img.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] *
                 static_cast<double>(
                     d[(y * w + clamp(static_cast<std::ptrdiff_t>(x) + i, w)) *
                           c +
                       ch]);
        mid[(y * w + x) * c + ch] = static_cast<T>(acc);
      }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] *
                 static_cast<double>(
                     mid[(clamp(static_cast<std::ptrdiff_t>(y) + i, h) * w + x) *
                             c +
                         ch]);
        out[(y * w + x) * c + ch] = static_cast<T>(acc);
      }
  return Tensor<T>::from_data(img.shape(), std::move(out));
}

template <typename T>
T bilinear_sample(const std::vector<T>& d, std::size_t h, std::size_t w,
                  std::size_t c, double y, double x, std::size_t ch) {
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  std::size_t y0 = static_cast<std::size_t>(y);
  std::size_t x0 = static_cast<std::size_t>(x);
  std::size_t y1 = std::min(y0 + 1, h - 1);
  std::size_t x1 = std::min(x0 + 1, w - 1);
  double fy = y - static_cast<double>(y0);
  double fx = x - static_cast<double>(x0);
  double v00 = d[(y0 * w + x0) * c + ch], v01 = d[(y0 * w + x1) * c + ch];
  double v10 = d[(y1 * w + x0) * c + ch], v11 = d[(y1 * w + x1) * c + ch];
  return static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                        fy * ((1 - fx) * v10 + fx * v11));
}

/// Radial coordinate remap about the image center with bilinear sampling;
/// `map` takes (radius, max_radius) and returns (scale, angle).
template <typename T, typename MapFn>
Tensor<T> radial_remap(const Tensor<T>& img, MapFn&& map) {
  std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  double cy = (static_cast<double>(h) - 1.0) / 2.0;
  double cx = (static_cast<double>(w) - 1.0) / 2.0;
  double max_r = std::sqrt(cy * cy + cx * cx);  // half-diagonal
  const auto& d = img.data();
  std::vector<T> out(img.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double dy = static_cast<double>(y) - cy;
      double dx = static_cast<double>(x) - cx;
      double r = std::sqrt(dy * dy + dx * dx);
      auto [scale, angle] = map(r, max_r);
      double sy, sx;
      if (r < 1e-12) {
        sy = cy;
        sx = cx;
      } else {
        double cs = std::cos(angle), sn = std::sin(angle);
        sy = cy + scale * (dy * cs - dx * sn);
        sx = cx + scale * (dy * sn + dx * cs);
      }
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = bilinear_sample(d, h, w, c, sy, sx, ch);
    }
  return Tensor<T>::from_data(img.shape(), std::move(out));
}

}  // namespace detail

/// Applies one distortion to an HxWxC image in [-1,1]; shape preserved,
/// identity at zero strength for every kind.
template <typename T>
Tensor<T> distort(const Tensor<T>& image, const DistortionSpec& spec) {
  check<ShapeError>(image.rank() == 3, "distort expects HxWxC image, got ",
                    shape_str(image.shape()));
  spec.validate();
  switch (spec.kind) {
    case DistortionKind::blur:
      return detail::gaussian_blur(image, spec.strength);
    case DistortionKind::sharp: {
      if (spec.strength == 0.0) return image.detach();
      auto blurred = detail::gaussian_blur(image, 2.0);
      std::vector<T> out(image.size());
      const auto& d = image.data();
      const auto& b = blurred.data();
      for (std::size_t i = 0; i < out.size(); ++i) {
        double v = d[i] + spec.strength * (d[i] - b[i]);
        out[i] = static_cast<T>(std::min(1.0, std::max(-1.0, v)));
      }
      return Tensor<T>::from_data(image.shape(), std::move(out));
    }
    case DistortionKind::noise: {
      if (spec.strength == 0.0) return image.detach();
      CounterRng rng(spec.seed, "noise");
      std::vector<T> out(image.size());
      const auto& d = image.data();
      for (std::size_t i = 0; i < out.size(); ++i) {
        double v = d[i] + spec.strength * rng.next_normal();
        out[i] = static_cast<T>(std::min(1.0, std::max(-1.0, v)));
      }
      return Tensor<T>::from_data(image.shape(), std::move(out));
    }
    case DistortionKind::pinch: {
      double a = spec.strength;
      return detail::radial_remap(image, [a](double r, double max_r) {
        if (r >= max_r || r <= 0.0) return std::pair{1.0, 0.0};
        return std::pair{std::pow(r / max_r, a), 0.0};
      });
    }
    case DistortionKind::whirl: {
      double max_angle = spec.strength * 3.141592653589793 / 180.0;
      return detail::radial_remap(image, [max_angle](double r, double max_r) {
        double angle = r < max_r ? max_angle * (1.0 - r / max_r) : 0.0;
        return std::pair{1.0, angle};
      });
    }
  }
  throw Error("unreachable distortion kind");
}

// -------------------------------- manifest ---------------------------------

/// One dataset row: where the crop comes from and how it was transformed.
struct ManifestEntry {
  std::string patient_id;
  Label label = Label::normal;
  std::string split;  // "train" | "test"
  std::string fundus_path, angio_path;
  std::size_t crop_row = 0, crop_col = 0, crop_size = 512;
  bool flip = false;
  int rot = 0;
  std::uint64_t seed = 0;
};

inline void write_manifest(const std::string& filename,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream out(filename);
  check<DataError>(out.good(), "cannot write manifest: ", filename);
  for (const auto& e : entries) {
    nlohmann::json j = {{"patient", e.patient_id},
                        {"label", label_str(e.label)},
                        {"split", e.split},
                        {"fundus", e.fundus_path},
                        {"fa", e.angio_path},
                        {"row", e.crop_row},
                        {"col", e.crop_col},
                        {"size", e.crop_size},
                        {"flip", e.flip},
                        {"rot", e.rot},
                        {"seed", e.seed}};
    out << j.dump() << "\n";
  }
}

inline std::vector<ManifestEntry> read_manifest(const std::string& filename) {
  std::ifstream in(filename);
  check<DataError>(in.good(), "cannot open manifest: ", filename);
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(strcat_msg("bad manifest line ", lineno, " in ",
                                 filename, ": ", e.what()));
    }
    ManifestEntry e;
    e.patient_id = j.at("patient").get<std::string>();
    e.label = label_from_string(j.at("label").get<std::string>());
    e.split = j.at("split").get<std::string>();
    e.fundus_path = j.at("fundus").get<std::string>();
    e.angio_path = j.at("fa").get<std::string>();
    e.crop_row = j.at("row").get<std::size_t>();
    e.crop_col = j.at("col").get<std::size_t>();
    e.crop_size = j.at("size").get<std::size_t>();
    e.flip = j.at("flip").get<bool>();
    e.rot = j.at("rot").get<int>();
    e.seed = j.at("seed").get<std::uint64_t>();
    entries.push_back(std::move(e));
  }
  return entries;
}

/// A source pair on disk plus its dimensions (images are loaded lazily).
struct SourceInfo {
  std::string patient_id;
  Label label = Label::normal;
  std::string fundus_path, angio_path;
  std::size_t height = 0, width = 0;
};

/// Crop plan for the training split: `count` seeded origins per source.
inline std::vector<ManifestEntry> plan_training_crops(
    const std::vector<SourceInfo>& sources, std::size_t crop,
    std::size_t count, std::uint64_t seed) {
  std::vector<ManifestEntry> out;
  for (const auto& s : sources) {
    check<ShapeError>(crop <= s.height && crop <= s.width, "crop ", crop,
                      " exceeds source ", s.height, "x", s.width, " for ",
                      s.patient_id);
    CounterRng rng(fold(seed, hash_str(s.patient_id)), "crops");
    for (std::size_t i = 0; i < count; ++i) {
      ManifestEntry e;
      e.patient_id = s.patient_id;
      e.label = s.label;
      e.split = "train";
      e.fundus_path = s.fundus_path;
      e.angio_path = s.angio_path;
      e.crop_row = static_cast<std::size_t>(rng.next_below(s.height - crop + 1));
      e.crop_col = static_cast<std::size_t>(rng.next_below(s.width - crop + 1));
      e.crop_size = crop;
      e.seed = seed;
      out.push_back(std::move(e));
    }
  }
  return out;
}

/// Quadrant plan for the test split: 4 corner crops per source.
inline std::vector<ManifestEntry> plan_quadrant_crops(
    const std::vector<SourceInfo>& sources, std::size_t crop,
    std::uint64_t seed) {
  std::vector<ManifestEntry> out;
  for (const auto& s : sources) {
    check<ShapeError>(crop <= s.height && crop <= s.width,
                      "quadrant crop exceeds source for ", s.patient_id);
    for (auto [row, col] : {std::pair<std::size_t, std::size_t>{0, 0},
                            {0, s.width - crop},
                            {s.height - crop, 0},
                            {s.height - crop, s.width - crop}}) {
      ManifestEntry e;
      e.patient_id = s.patient_id;
      e.label = s.label;
      e.split = "test";
      e.fundus_path = s.fundus_path;
      e.angio_path = s.angio_path;
      e.crop_row = row;
      e.crop_col = col;
      e.crop_size = crop;
      e.seed = seed;
      out.push_back(std::move(e));
    }
  }
  return out;
}

/// Appends augmented copies of the minority class until both classes reach
/// `target_per_class` entries.
inline std::vector<ManifestEntry> balance_manifest(
    std::vector<ManifestEntry> entries, std::size_t target_per_class,
    std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < entries.size(); ++i)
    by_class[entries[i].label == Label::normal ? 1 : 0].push_back(i);
  check<Error>(target_per_class >= by_class[0].size() &&
                   target_per_class >= by_class[1].size(),
               "balance target below existing class count");
  CounterRng rng(seed, "balance");
  for (int cls = 0; cls < 2; ++cls) {
    const auto& idx = by_class[cls];
    if (idx.empty()) continue;
    std::size_t need = target_per_class - idx.size();
    for (std::size_t i = 0; i < need; ++i) {
      ManifestEntry e = entries[idx[i % idx.size()]];
      auto [flip, rot] = detail::pick_augmentation(rng);
      e.flip = flip;
      e.rot = rot;
      entries.push_back(std::move(e));
    }
  }
  return entries;
}

// ------------------------------ labels file --------------------------------

struct LabelRow {
  Label label = Label::normal;
  std::optional<Label> predicted;
};

/// CSV of patient_id,label[,predicted]; an optional header line is skipped.
inline std::map<std::string, LabelRow> load_labels(const std::string& filename) {
  std::ifstream in(filename);
  check<DataError>(in.good(), "cannot open labels file: ", filename);
  std::map<std::string, LabelRow> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (first && cols.size() >= 2 && cols[0] == "patient_id") {
      first = false;
      continue;
    }
    first = false;
    check<DataError>(cols.size() >= 2, "bad labels line: ", line);
    LabelRow row;
    row.label = label_from_string(cols[1]);
    if (cols.size() >= 3 && !cols[2].empty())
      row.predicted = label_from_string(cols[2]);
    out[cols[0]] = row;
  }
  return out;
}

// ------------------------------ data sources -------------------------------

/// Materializes a manifest row: loads the source pair, crops, augments.
template <typename T = double>
class ManifestDataset {
 public:
  explicit ManifestDataset(std::vector<ManifestEntry> entries)
      : entries_(std::move(entries)) {}

  static ManifestDataset load(const std::string& manifest_path,
                              const std::string& split) {
    std::vector<ManifestEntry> picked;
    for (auto& e : read_manifest(manifest_path))
      if (split.empty() || e.split == split) picked.push_back(std::move(e));
    check<DataError>(!picked.empty(), "manifest ", manifest_path,
                     " has no '", split, "' entries");
    return ManifestDataset(std::move(picked));
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<ManifestEntry>& entries() const { return entries_; }

  FundusAngioPair<T> get(std::size_t i) const {
    const ManifestEntry& e = entries_.at(i);
    FundusAngioPair<T> p;
    p.fundus = crop_image(cached(e.fundus_path), e.crop_row, e.crop_col,
                          e.crop_size);
    p.angio =
        crop_image(cached(e.angio_path), e.crop_row, e.crop_col, e.crop_size);
    p.label = e.label;
    p.patient_id = e.patient_id;
    p.crop_row = e.crop_row;
    p.crop_col = e.crop_col;
    if (e.flip || e.rot) p = detail::augment_pair(p, e.flip, e.rot);
    return p;
  }

 private:
  const Tensor<T>& cached(const std::string& path) const {
    auto it = cache_.find(path);
    if (it == cache_.end()) it = cache_.emplace(path, read_png<T>(path)).first;
    return it->second;
  }

  std::vector<ManifestEntry> entries_;
  mutable std::map<std::string, Tensor<T>> cache_;
};

}  // namespace vtgan
