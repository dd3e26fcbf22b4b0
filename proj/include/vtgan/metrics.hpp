#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtgan/config.hpp"
#include "vtgan/core.hpp"
#include "vtgan/data.hpp"
#include "vtgan/losses.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

// ------------------------------ feature clouds -----------------------------

/// n x d matrix of extracted feature vectors.
struct FeatureCloud {
  std::size_t n = 0, d = 0;
  std::vector<double> x;  // row-major
  std::string extractor_id;

  double at(std::size_t i, std::size_t j) const { return x[i * d + j]; }
};

/// Global-average-pools the extractor's last tap into one feature vector per
/// image.
template <typename T>
FeatureCloud extract_cloud(const FeatureExtractor<T>& fx,
                           const std::vector<Tensor<T>>& images) {
  check<Error>(!images.empty(), "cannot extract features from zero images");
  NoGradGuard ng;
  FeatureCloud cloud;
  cloud.extractor_id = fx.id();
  cloud.n = images.size();
  for (const auto& img : images) {
    check<ShapeError>(img.rank() == 3, "extract_cloud expects HxWxC images, got ",
                      shape_str(img.shape()));
    auto batch = reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)});
    auto taps = fx.features(batch);
    const auto& last = taps.back();
    std::size_t c = last.dim(3), hw = last.dim(1) * last.dim(2);
    if (cloud.d == 0) {
      cloud.d = c;
      cloud.x.reserve(cloud.n * c);
    }
    check<Error>(c == cloud.d, "inconsistent feature widths across images");
    std::vector<double> pooled(c, 0.0);
    const auto& data = last.data();
    for (std::size_t i = 0; i < hw; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) pooled[ch] += data[i * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch)
      cloud.x.push_back(pooled[ch] / static_cast<double>(hw));
  }
  return cloud;
}

// ------------------------- symmetric eigen solver ---------------------------

namespace detail {

/// Cyclic Jacobi for a symmetric n x n matrix (row-major, destroyed).
/// Eigenvectors, when requested, land in the columns of `vecs`.
inline void jacobi_eigh(std::vector<double>& a, std::size_t n,
                        std::vector<double>& values,
                        std::vector<double>* vecs) {
  if (vecs) {
    vecs->assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) (*vecs)[i * n + i] = 1.0;
  }
  double frob = 0.0;
  for (double v : a) frob += v * v;
  double tol = 1e-14 * std::max(1.0, std::sqrt(frob));
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (std::sqrt(off) <= tol) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::abs(apq) <= tol / static_cast<double>(n)) continue;
        double app = a[p * n + p], aqq = a[q * n + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        if (vecs)
          for (std::size_t k = 0; k < n; ++k) {
            double vkp = (*vecs)[k * n + p], vkq = (*vecs)[k * n + q];
            (*vecs)[k * n + p] = c * vkp - s * vkq;
            (*vecs)[k * n + q] = s * vkp + c * vkq;
          }
      }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];
}

inline void mean_and_cov(const FeatureCloud& c, std::vector<double>& mean,
                         std::vector<double>& cov) {
  std::size_t n = c.n, d = c.d;
  mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += c.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  cov.assign(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double dj = c.at(i, j) - mean[j];
      for (std::size_t k = j; k < d; ++k)
        cov[j * d + k] += dj * (c.at(i, k) - mean[k]);
    }
  // unbiased (n-1) normalizer
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = j; k < d; ++k) {
      cov[j * d + k] /= static_cast<double>(n - 1);
      cov[k * d + j] = cov[j * d + k];
    }
}

/// Clamps tiny negative eigenvalues to zero; rejects ones below -1e-8.
inline double clamp_eigenvalue(double v, const char* what) {
  check<NumericError>(v >= -1e-8, what, " has eigenvalue ", v,
                      " below the -1e-8 floor");
  return std::max(v, 0.0);
}

}  // namespace detail

// ----------------------------------- FID -----------------------------------

/// Frechet distance between Gaussian fits:
/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), the matrix root taken
/// via the symmetric form sqrt(Sb)^(1/2) Sa sqrt(Sb)^(1/2).
inline double fid(const FeatureCloud& a, const FeatureCloud& b) {
  check<DataError>(a.d == b.d, "feature dims differ: ", a.d, " vs ", b.d);
  check<DataError>(a.extractor_id == b.extractor_id,
                   "feature clouds come from different extractors: ",
                   a.extractor_id, " vs ", b.extractor_id);
  check<DataError>(a.n >= 2 && b.n >= 2, "FID needs at least 2 samples per cloud");
  std::size_t d = a.d;
  std::vector<double> mu_a, mu_b, cov_a, cov_b;
  detail::mean_and_cov(a, mu_a, cov_a);
  detail::mean_and_cov(b, mu_b, cov_b);

  double mean_term = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double diff = mu_a[j] - mu_b[j];
    mean_term += diff * diff;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    tr_a += cov_a[j * d + j];
    tr_b += cov_b[j * d + j];
  }

  // B^(1/2) from the eigendecomposition of cov_b
  std::vector<double> work = cov_b, evals, evecs;
  detail::jacobi_eigh(work, d, evals, &evecs);
  for (auto& v : evals)
    v = std::sqrt(detail::clamp_eigenvalue(v, "covariance"));
  std::vector<double> root_b(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        s += evecs[i * d + k] * evals[k] * evecs[j * d + k];
      root_b[i * d + j] = s;
    }
  // M = B^(1/2) A B^(1/2), symmetric PSD up to roundoff
  std::vector<double> tmp(d * d, 0.0), m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      double r = root_b[i * d + k];
      if (r == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) tmp[i * d + j] += r * cov_a[k * d + j];
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      double t = tmp[i * d + k];
      if (t == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) m[i * d + j] += t * root_b[k * d + j];
    }
  // symmetrize against roundoff before the second eigendecomposition
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      double avg = 0.5 * (m[i * d + j] + m[j * d + i]);
      m[i * d + j] = m[j * d + i] = avg;
    }
  std::vector<double> m_evals;
  detail::jacobi_eigh(m, d, m_evals, nullptr);
  double tr_sqrt = 0.0;
  for (double v : m_evals)
    tr_sqrt += std::sqrt(detail::clamp_eigenvalue(v, "product matrix"));

  return mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
}

// ----------------------------------- KID -----------------------------------

/// Unbiased squared MMD with the polynomial kernel (x.y/d + 1)^3. For
/// equal-size clouds the paired-sample form is used (matched cross pairs
/// excluded), which is exactly zero on identical multisets; otherwise the
/// cross term is the full mean.
inline double kid(const FeatureCloud& a, const FeatureCloud& b) {
  check<DataError>(a.d == b.d, "feature dims differ: ", a.d, " vs ", b.d);
  check<DataError>(a.extractor_id == b.extractor_id,
                   "feature clouds come from different extractors");
  check<DataError>(a.n >= 2 && b.n >= 2, "KID needs at least 2 samples per cloud");
  std::size_t d = a.d;
  auto kern = [d](const double* x, const double* y) {
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += x[i] * y[i];
    double v = dot / static_cast<double>(d) + 1.0;
    return v * v * v;
  };
  double kaa = 0.0;
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t j = i + 1; j < a.n; ++j)
      kaa += kern(&a.x[i * d], &a.x[j * d]);
  kaa = 2.0 * kaa / (static_cast<double>(a.n) * (a.n - 1));
  double kbb = 0.0;
  for (std::size_t i = 0; i < b.n; ++i)
    for (std::size_t j = i + 1; j < b.n; ++j)
      kbb += kern(&b.x[i * d], &b.x[j * d]);
  kbb = 2.0 * kbb / (static_cast<double>(b.n) * (b.n - 1));
  double kab = 0.0;
  if (a.n == b.n) {
    for (std::size_t i = 0; i < a.n; ++i)
      for (std::size_t j = 0; j < b.n; ++j)
        if (i != j) kab += kern(&a.x[i * d], &b.x[j * d]);
    kab /= static_cast<double>(a.n) * (a.n - 1);
  } else {
    for (std::size_t i = 0; i < a.n; ++i)
      for (std::size_t j = 0; j < b.n; ++j)
        kab += kern(&a.x[i * d], &b.x[j * d]);
    kab /= static_cast<double>(a.n) * static_cast<double>(b.n);
  }
  return kaa + kbb - 2.0 * kab;
}

// --------------------------- classification metrics ------------------------

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  Label positive_class = Label::normal;

  std::size_t total() const { return tp + fp + tn + fn; }
};

struct ClassificationMetrics {
  double accuracy = 0, sensitivity = 0, specificity = 0;
};

inline ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  check<DataError>(c.total() > 0, "empty confusion matrix");
  check<NumericError>(c.tp + c.fn > 0,
                      "sensitivity undefined: no positive samples");
  check<NumericError>(c.tn + c.fp > 0,
                      "specificity undefined: no negative samples");
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  m.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return m;
}

/// Confusion counts from (true, predicted) label pairs.
inline ConfusionCounts confusion_from_pairs(
    const std::vector<std::pair<Label, Label>>& pairs,
    Label positive_class = Label::normal) {
  ConfusionCounts c;
  c.positive_class = positive_class;
  for (auto [truth, pred] : pairs) {
    bool pos = truth == positive_class;
    bool hit = pred == truth;
    if (pos)
      hit ? ++c.tp : ++c.fn;
    else
      hit ? ++c.tn : ++c.fp;
  }
  return c;
}

// ------------------------------- eval report --------------------------------

struct EvalReport {
  std::string extractor_id;
  std::size_t n_generated = 0, n_reference = 0;
  struct Row {
    std::string condition;
    double fid = 0, kid = 0;
  };
  std::vector<Row> rows;
  std::optional<ConfusionCounts> confusion;
  std::optional<ClassificationMetrics> classification;
  std::string note;

  /// Line-delimited JSON, one object per row plus a header object.
  void write_jsonl(std::ostream& os) const {
    nlohmann::json header = {{"extractor", extractor_id},
                             {"n_generated", n_generated},
                             {"n_reference", n_reference}};
    if (!note.empty()) header["note"] = note;
    os << header.dump() << "\n";
    for (const auto& r : rows)
      os << nlohmann::json{{"condition", r.condition},
                           {"fid", r.fid},
                           {"kid", r.kid}}
                .dump()
         << "\n";
    if (classification) {
      nlohmann::json j = {{"accuracy", classification->accuracy},
                          {"sensitivity", classification->sensitivity},
                          {"specificity", classification->specificity}};
      if (confusion)
        j["confusion"] = {{"tp", confusion->tp},
                          {"fp", confusion->fp},
                          {"tn", confusion->tn},
                          {"fn", confusion->fn},
                          {"positive", label_str(confusion->positive_class)}};
      os << j.dump() << "\n";
    }
  }

  /// Aligned plain-text table.
  void write_table(std::ostream& os) const {
    os << std::left << std::setw(12) << "condition" << std::right
       << std::setw(12) << "FID" << std::setw(12) << "KID" << "\n";
    for (const auto& r : rows)
      os << std::left << std::setw(12) << r.condition << std::right
         << std::fixed << std::setprecision(4) << std::setw(12) << r.fid
         << std::setw(12) << std::setprecision(5) << r.kid << "\n";
    if (classification) {
      os << "\n"
         << "accuracy " << std::setprecision(1)
         << 100.0 * classification->accuracy << "%  sensitivity "
         << 100.0 * classification->sensitivity << "%  specificity "
         << 100.0 * classification->specificity << "%\n";
    }
    if (!note.empty()) os << "\n" << note << "\n";
    os.unsetf(std::ios::fixed);
  }
};

namespace detail {

inline std::vector<std::filesystem::path> list_pngs(const std::string& dir) {
  check<DataError>(std::filesystem::is_directory(dir),
                   "not a directory: ", dir);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  check<DataError>(!files.empty(), "no .png files in ", dir);
  return files;
}

}  // namespace detail

/// FID/KID of a generated directory against a reference directory, repeated
/// per distortion condition (the distortion is applied to the generated
/// images). Classification metrics are included when the labels CSV carries
/// a `predicted` column.
inline EvalReport evaluate_run(const std::string& generated_dir,
                               const std::string& reference_dir,
                               const std::optional<std::string>& labels_csv,
                               const FeatureExtractor<double>& fx,
                               const std::vector<DistortionKind>& distortions,
                               const DistortionDefaults& strengths,
                               std::uint64_t seed) {
  auto gen_files = detail::list_pngs(generated_dir);
  auto ref_files = detail::list_pngs(reference_dir);
  check<DataError>(gen_files.size() == ref_files.size(),
                   "directory sizes differ: ", gen_files.size(), " generated vs ",
                   ref_files.size(), " reference");

  std::vector<Tensor<double>> generated, reference;
  std::vector<std::string> load_errors;
  for (const auto& f : gen_files) {
    try {
      generated.push_back(read_png<double>(f.string()));
    } catch (const Error& e) {
      load_errors.push_back(e.what());
    }
  }
  for (const auto& f : ref_files) {
    try {
      reference.push_back(read_png<double>(f.string()));
    } catch (const Error& e) {
      load_errors.push_back(e.what());
    }
  }
  if (!load_errors.empty()) {
    std::string all;
    for (const auto& e : load_errors) all += "\n  " + e;
    throw DataError("unreadable images:" + all);
  }

  EvalReport report;
  report.extractor_id = fx.id();
  report.n_generated = generated.size();
  report.n_reference = reference.size();

  FeatureCloud ref_cloud = extract_cloud(fx, reference);
  auto add_row = [&](const std::string& condition,
                     const std::vector<Tensor<double>>& imgs) {
    FeatureCloud c = extract_cloud(fx, imgs);
    report.rows.push_back({condition, fid(c, ref_cloud), kid(c, ref_cloud)});
  };
  add_row("none", generated);
  for (DistortionKind kind : distortions) {
    DistortionSpec spec;
    spec.kind = kind;
    spec.seed = seed;
    switch (kind) {
      case DistortionKind::blur: spec.strength = strengths.blur_sigma; break;
      case DistortionKind::sharp: spec.strength = strengths.sharp_amount; break;
      case DistortionKind::noise: spec.strength = strengths.noise_sigma; break;
      case DistortionKind::pinch: spec.strength = strengths.pinch_factor; break;
      case DistortionKind::whirl: spec.strength = strengths.whirl_degrees; break;
    }
    std::vector<Tensor<double>> distorted;
    distorted.reserve(generated.size());
    for (const auto& img : generated) distorted.push_back(distort(img, spec));
    add_row(distortion_str(kind), distorted);
  }

  if (labels_csv) {
    auto labels = load_labels(*labels_csv);
    std::vector<std::pair<Label, Label>> pairs;
    for (const auto& [id, row] : labels)
      if (row.predicted) pairs.emplace_back(row.label, *row.predicted);
    if (!pairs.empty()) {
      report.confusion = confusion_from_pairs(pairs);
      report.classification = classification_metrics(*report.confusion);
    } else {
      report.note =
          "labels file has no 'predicted' column; classification skipped";
    }
  }
  return report;
}

}  // namespace vtgan
