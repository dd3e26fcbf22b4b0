// Batch front end: dataset preparation, training, synthesis, classification,
// distortion, evaluation and gradient self-verification.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vtgan/config.hpp"
#include "vtgan/data.hpp"
#include "vtgan/gradcheck_suite.hpp"
#include "vtgan/image_io.hpp"
#include "vtgan/metrics.hpp"
#include "vtgan/trainer.hpp"

namespace fs = std::filesystem;
using vtgan::RunConfig;
using vtgan::Tensor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string scale;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run-config file");
  cmd->add_option("--seed", opts.seed, "global RNG seed");
  cmd->add_option("--scale", opts.scale, "architecture preset: full or desk")
      ->check(CLI::IsMember({"full", "desk"}));
}

/// defaults < config file < command-line flags
RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = RunConfig::load(opts.config_path);
  if (!opts.scale.empty()) {
    cfg.scale = opts.scale;
    cfg.gan = vtgan::GanConfig::preset(opts.scale);
  }
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

std::vector<fs::path> pngs_in(const std::string& dir) {
  vtgan::check<vtgan::DataError>(fs::is_directory(dir),
                                 "not a directory: ", dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Patients discovered as <id>_fundus.png / <id>_fa.png pairs.
std::vector<vtgan::SourceInfo> scan_pairs(const std::string& dir,
                                          const std::string& labels_csv) {
  auto labels = vtgan::load_labels(labels_csv);
  std::map<std::string, vtgan::SourceInfo> byid;
  for (const auto& f : pngs_in(dir)) {
    std::string stem = f.stem().string();
    if (ends_with(stem, "_fundus"))
      byid[stem.substr(0, stem.size() - 7)].fundus_path = f.string();
    else if (ends_with(stem, "_fa"))
      byid[stem.substr(0, stem.size() - 3)].angio_path = f.string();
  }
  std::vector<vtgan::SourceInfo> out;
  for (auto& [id, info] : byid) {
    vtgan::check<vtgan::DataError>(!info.fundus_path.empty(),
                                   "missing fundus image for patient ", id);
    vtgan::check<vtgan::DataError>(!info.angio_path.empty(),
                                   "missing FA image for patient ", id);
    auto it = labels.find(id);
    vtgan::check<vtgan::DataError>(it != labels.end(),
                                   "no label for patient ", id, " in ",
                                   labels_csv);
    info.patient_id = id;
    info.label = it->second.label;
    auto fundus = vtgan::read_png<double>(info.fundus_path);
    auto angio = vtgan::read_png<double>(info.angio_path);
    vtgan::check<vtgan::DataError>(
        fundus.dim(0) == angio.dim(0) && fundus.dim(1) == angio.dim(1),
        "unregistered pair for patient ", id, ": ",
        vtgan::shape_str(fundus.shape()), " vs ",
        vtgan::shape_str(angio.shape()));
    info.height = fundus.dim(0);
    info.width = fundus.dim(1);
    out.push_back(info);
  }
  vtgan::check<vtgan::DataError>(!out.empty(), "no image pairs found in ", dir);
  return out;
}

void load_weights_checked(vtgan::ParameterStore<double>& ps,
                          const std::string& file,
                          const std::vector<std::string>& required_prefixes) {
  std::set<std::string> in_file;
  for (const auto& p : vtgan::weight_file_paths(file)) in_file.insert(p);
  for (const auto& prefix : required_prefixes)
    for (const auto& path : ps.paths(prefix))
      vtgan::check<vtgan::DataError>(in_file.count(path), "weight file ", file,
                                     " is missing parameter ", path);
  vtgan::load_weights(ps, file);
}

// ----------------------------- prepare -------------------------------------

int cmd_prepare(const CommonOpts& common, const std::string& in_dir,
                const std::string& labels_csv, const std::string& out_dir,
                std::size_t crop, std::size_t count,
                std::optional<std::size_t> test_count) {
  RunConfig cfg = resolve_config(common);
  auto sources = scan_pairs(in_dir, labels_csv);

  // patient-level split: no patient appears in both train and test
  std::vector<std::size_t> order(sources.size());
  std::iota(order.begin(), order.end(), 0);
  vtgan::CounterRng rng(cfg.seed, "patient.split");
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  std::size_t n_test = test_count ? *test_count
                                  : (sources.size() * 45 + 50) / 100;
  vtgan::check<vtgan::DataError>(n_test < sources.size(),
                                 "test split of ", n_test,
                                 " leaves no training patients");
  std::vector<vtgan::SourceInfo> train_src, test_src;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_test ? test_src : train_src).push_back(sources[order[i]]);

  auto entries = vtgan::plan_training_crops(train_src, crop, count, cfg.seed);
  std::size_t abnormal = 0, normal = 0;
  for (const auto& e : entries)
    (e.label == vtgan::Label::abnormal ? abnormal : normal)++;
  entries = vtgan::balance_manifest(entries, std::max(abnormal, normal),
                                    cfg.seed);
  auto test_entries = vtgan::plan_quadrant_crops(test_src, crop, cfg.seed);
  entries.insert(entries.end(), test_entries.begin(), test_entries.end());

  fs::create_directories(out_dir);
  std::string manifest = out_dir + "/manifest.jsonl";
  vtgan::write_manifest(manifest, entries);
  std::cout << "patients: " << sources.size() << " (" << train_src.size()
            << " train, " << test_src.size() << " test)\n"
            << "train crops: " << entries.size() - test_entries.size()
            << " (balanced from " << abnormal << " Abnormal / " << normal
            << " Normal)\n"
            << "test crops: " << test_entries.size() << "\n"
            << "manifest: " << manifest << "\n";
  return kExitOk;
}

// ------------------------------ train ---------------------------------------

int cmd_train(const CommonOpts& common, const std::string& manifest,
              const std::string& out_dir, std::optional<std::size_t> epochs,
              const std::string& resume) {
  RunConfig cfg = resolve_config(common);
  if (epochs) cfg.train.epochs = *epochs;
  auto dataset = vtgan::ManifestDataset<double>::load(manifest, "train");
  for (const auto& e : dataset.entries())
    vtgan::check<vtgan::DataError>(
        e.crop_size == cfg.gan.fine_size, "manifest crop size ", e.crop_size,
        " does not match configured fine size ", cfg.gan.fine_size,
        " (pass --scale or --config)");

  vtgan::ParameterStore<double> store(cfg.seed);
  vtgan::build_vtgan(store, cfg.gan);
  vtgan::Trainer<double> trainer(store, cfg);
  if (!resume.empty()) {
    trainer.load_checkpoint(resume);
    std::cout << "resumed from " << resume << " at epoch " << trainer.epoch()
              << ", step " << trainer.cycle_counter() << "\n";
  }
  trainer.run(dataset.size(), [&](std::size_t i) { return dataset.get(i); },
              out_dir);
  std::cout << "trained " << cfg.train.epochs << " epochs; checkpoints in "
            << out_dir << "\n";
  return kExitOk;
}

// ---------------------------- synthesize ------------------------------------

int cmd_synthesize(const CommonOpts& common, const std::string& weights,
                   const std::string& input, const std::string& out_dir) {
  RunConfig cfg = resolve_config(common);
  vtgan::ParameterStore<double> store(cfg.seed);
  vtgan::build_generators(store, cfg.gan.generator_config());
  load_weights_checked(store, weights, {"g_coarse", "g_fine"});

  std::vector<fs::path> inputs;
  if (fs::is_directory(input))
    inputs = pngs_in(input);
  else
    inputs.push_back(input);
  vtgan::check<vtgan::DataError>(!inputs.empty(), "no input images in ", input);
  fs::create_directories(out_dir);

  for (const auto& path : inputs) {
    auto fundus = vtgan::read_png<double>(path.string());
    vtgan::check<vtgan::DataError>(
        fundus.dim(2) == 3, "fundus must be RGB: ", path.string());
    vtgan::check<vtgan::DataError>(
        fundus.dim(0) == cfg.gan.fine_size &&
            fundus.dim(1) == cfg.gan.fine_size,
        path.string(), " is ", fundus.dim(0), "x", fundus.dim(1),
        " but the configured scale expects ", cfg.gan.fine_size, "x",
        cfg.gan.fine_size, " (pass --scale desk for small inputs)");
    auto batch = vtgan::reshape(fundus, {1, fundus.dim(0), fundus.dim(1), 3});
    auto result = vtgan::synthesize(store, cfg.gan.generator_config(), batch,
                                    vtgan::Mode::eval());
    std::size_t fine = cfg.gan.fine_size, coarse = fine / 2;
    std::string stem = path.stem().string();
    auto fine_img = vtgan::reshape(result.fine, {fine, fine, 1});
    auto coarse_img = vtgan::reshape(result.coarse, {coarse, coarse, 1});
    std::string fine_out =
        out_dir + "/" + stem + "_fa_" + std::to_string(fine) + ".png";
    std::string coarse_out =
        out_dir + "/" + stem + "_fa_" + std::to_string(coarse) + ".png";
    vtgan::write_png(fine_out, fine_img);
    vtgan::write_png(coarse_out, coarse_img);
    std::cout << path.string() << " -> " << fine_out << ", " << coarse_out
              << "\n";
  }
  return kExitOk;
}

// ----------------------------- classify -------------------------------------

int cmd_classify(const CommonOpts& common, const std::string& weights,
                 const std::string& in_dir, const std::string& out_file) {
  RunConfig cfg = resolve_config(common);
  vtgan::ParameterStore<double> store(cfg.seed);
  auto vt_cfg = cfg.gan.vt_config(true);
  vtgan::build_vt(store, vtgan::kVtFinePrefix, vt_cfg);
  load_weights_checked(store, weights, {vtgan::kVtFinePrefix});

  // pairs when both images exist; FA alone gets a zero fundus
  std::map<std::string, std::pair<std::string, std::string>> items;
  for (const auto& f : pngs_in(in_dir)) {
    std::string stem = f.stem().string();
    if (ends_with(stem, "_fundus"))
      items[stem.substr(0, stem.size() - 7)].first = f.string();
    else if (ends_with(stem, "_fa"))
      items[stem.substr(0, stem.size() - 3)].second = f.string();
    else
      items[stem].second = f.string();
  }
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_file.empty()) {
    file.open(out_file);
    vtgan::check<vtgan::DataError>(file.good(), "cannot write ", out_file);
    os = &file;
  }
  std::size_t n = 0;
  for (const auto& [id, paths] : items) {
    if (paths.second.empty()) continue;  // fundus without FA: nothing to rate
    auto angio = vtgan::read_png<double>(paths.second);
    vtgan::check<vtgan::DataError>(angio.dim(2) == 1,
                                   "FA image must be grayscale: ",
                                   paths.second);
    std::size_t s = cfg.gan.fine_size;
    vtgan::check<vtgan::DataError>(
        angio.dim(0) == s && angio.dim(1) == s, paths.second, " is ",
        angio.dim(0), "x", angio.dim(1), " but the configured scale expects ",
        s, "x", s);
    Tensor<double> fundus = paths.first.empty()
                                ? Tensor<double>::zeros({s, s, 3})
                                : vtgan::read_png<double>(paths.first);
    auto out = vtgan::vt_forward(store, vtgan::kVtFinePrefix, vt_cfg, fundus,
                                 angio, vtgan::Mode::eval());
    double p_abnormal = out.class_probs.data()[0];
    double p_normal = out.class_probs.data()[1];
    vtgan::json line = {
        {"id", id},
        {"p_abnormal", p_abnormal},
        {"p_normal", p_normal},
        {"predicted", p_normal >= p_abnormal ? "Normal" : "Abnormal"},
        {"fundus", !paths.first.empty()}};
    (*os) << line.dump() << "\n";
    ++n;
  }
  vtgan::check<vtgan::DataError>(n > 0, "no FA images found in ", in_dir);
  return kExitOk;
}

// ------------------------------ distort --------------------------------------

int cmd_distort(const CommonOpts& common, const std::string& in_dir,
                const std::string& out_dir, const std::string& kind_str,
                std::optional<double> strength) {
  RunConfig cfg = resolve_config(common);
  auto kind = vtgan::distortion_from_string(kind_str);
  vtgan::DistortionSpec spec;
  spec.kind = kind;
  spec.seed = cfg.seed;
  const auto& d = cfg.distortion;
  switch (kind) {
    case vtgan::DistortionKind::blur: spec.strength = d.blur_sigma; break;
    case vtgan::DistortionKind::sharp: spec.strength = d.sharp_amount; break;
    case vtgan::DistortionKind::noise: spec.strength = d.noise_sigma; break;
    case vtgan::DistortionKind::pinch: spec.strength = d.pinch_factor; break;
    case vtgan::DistortionKind::whirl: spec.strength = d.whirl_degrees; break;
  }
  if (strength) spec.strength = *strength;
  spec.validate();

  auto files = pngs_in(in_dir);
  vtgan::check<vtgan::DataError>(!files.empty(), "no .png files in ", in_dir);
  fs::create_directories(out_dir);
  for (const auto& f : files) {
    auto img = vtgan::read_png<double>(f.string());
    vtgan::write_png(out_dir + "/" + f.filename().string(),
                     vtgan::distort(img, spec));
  }
  std::cout << "distorted " << files.size() << " images with " << kind_str
            << " strength " << spec.strength << " into " << out_dir << "\n";
  return kExitOk;
}

// ----------------------------- evaluate --------------------------------------

int cmd_evaluate(const CommonOpts& common, const std::string& generated,
                 const std::string& reference, const std::string& labels,
                 const std::string& out_prefix,
                 const std::string& extractor_file) {
  RunConfig cfg = resolve_config(common);
  std::unique_ptr<vtgan::CnnFeatureExtractor<double>> fx;
  if (!extractor_file.empty())
    fx = std::make_unique<vtgan::CnnFeatureExtractor<double>>(
        vtgan::CnnFeatureExtractor<double>::load(extractor_file));
  else
    fx = std::make_unique<vtgan::CnnFeatureExtractor<double>>(
        vtgan::CnnFeatureExtractor<double>::random_desk(
            cfg.gan.extractor_seed, 1));

  auto report = vtgan::evaluate_run(
      generated, reference,
      labels.empty() ? std::nullopt : std::optional<std::string>(labels), *fx,
      vtgan::all_distortions(), cfg.distortion, cfg.seed);

  report.write_table(std::cout);
  if (!out_prefix.empty()) {
    if (auto dir = fs::path(out_prefix).parent_path(); !dir.empty())
      fs::create_directories(dir);
    std::ofstream jsonl(out_prefix + ".jsonl");
    report.write_jsonl(jsonl);
    std::ofstream table(out_prefix + ".txt");
    report.write_table(table);
    std::cout << "report: " << out_prefix << ".jsonl, " << out_prefix
              << ".txt\n";
  }
  return kExitOk;
}

// ----------------------------- gradcheck -------------------------------------

int cmd_gradcheck(const CommonOpts& common) {
  RunConfig cfg = resolve_config(common);
  auto results = vtgan::run_gradcheck_suite(cfg.seed);
  bool ok = true;
  for (const auto& r : results) {
    bool passed = r.max_rel_err < 1e-4;
    ok = ok && passed;
    std::cout << std::left << std::setw(28) << r.name << std::scientific
              << std::setprecision(3) << r.max_rel_err
              << (passed ? "" : "  FAIL") << "\n";
  }
  std::cout << (ok ? "all gradient checks passed" : "gradient checks FAILED")
            << "\n";
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fundus-to-angiography synthesis and disease prediction"};
  app.require_subcommand(1);

  CommonOpts common;

  auto* prepare = app.add_subcommand(
      "prepare", "build a dataset manifest from an image directory");
  std::string in_dir, labels_csv, out_dir;
  std::size_t crop = 512, count = 50;
  std::optional<std::size_t> test_count;
  prepare->add_option("--in", in_dir, "directory of <id>_fundus.png / <id>_fa.png pairs")
      ->required();
  prepare->add_option("--labels", labels_csv, "CSV of patient_id,label")
      ->required();
  prepare->add_option("--out", out_dir, "output directory")->required();
  prepare->add_option("--crop", crop, "crop size (default 512)");
  prepare->add_option("--count", count, "random crops per training pair");
  prepare->add_option("--test-count", test_count,
                      "patients held out for the test split");
  add_common(prepare, common);

  auto* train = app.add_subcommand("train", "run the adversarial training loop");
  std::string manifest, train_out, resume;
  std::optional<std::size_t> epochs;
  train->add_option("--manifest", manifest, "dataset manifest")->required();
  train->add_option("--out", train_out, "checkpoint/log directory")->required();
  train->add_option("--epochs", epochs, "override epoch count");
  train->add_option("--resume", resume, "checkpoint prefix to resume from");
  add_common(train, common);

  auto* synth = app.add_subcommand("synthesize",
                                   "fundus PNGs in, angiogram PNGs out");
  std::string weights, synth_in, synth_out;
  synth->add_option("--weights", weights, "weight file")->required();
  synth->add_option("--in", synth_in, "fundus PNG or directory")->required();
  synth->add_option("--out-dir", synth_out, "output directory")->required();
  add_common(synth, common);

  auto* classify = app.add_subcommand(
      "classify", "Abnormal/Normal probabilities for FA or fundus+FA pairs");
  std::string cls_weights, cls_in, cls_out;
  classify->add_option("--weights", cls_weights, "weight file")->required();
  classify->add_option("--in", cls_in, "directory of images")->required();
  classify->add_option("--out", cls_out, "output file (default stdout)");
  add_common(classify, common);

  auto* distort = app.add_subcommand("distort",
                                     "apply a distortion to a directory");
  std::string dist_in, dist_out, dist_kind;
  std::optional<double> dist_strength;
  distort->add_option("--in", dist_in, "input directory")->required();
  distort->add_option("--out-dir", dist_out, "output directory")->required();
  distort
      ->add_option("--distortion", dist_kind,
                   "blur | sharp | noise | pinch | whirl")
      ->required();
  distort->add_option("--strength", dist_strength,
                      "kind-specific strength (default from config)");
  add_common(distort, common);

  auto* evaluate = app.add_subcommand(
      "evaluate", "FID/KID per distortion plus classification metrics");
  std::string eval_gen, eval_ref, eval_labels, eval_out, eval_extractor;
  evaluate->add_option("--generated", eval_gen, "generated image directory")
      ->required();
  evaluate->add_option("--reference", eval_ref, "reference image directory")
      ->required();
  evaluate->add_option("--labels", eval_labels,
                       "CSV of patient_id,label[,predicted]");
  evaluate->add_option("--out", eval_out, "report file prefix");
  evaluate->add_option("--extractor", eval_extractor,
                       "feature-extractor weight file (default: seeded CNN)");
  add_common(evaluate, common);

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference verification of every op and block");
  add_common(gradcheck, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (prepare->parsed())
      return cmd_prepare(common, in_dir, labels_csv, out_dir, crop, count,
                         test_count);
    if (train->parsed())
      return cmd_train(common, manifest, train_out, epochs, resume);
    if (synth->parsed())
      return cmd_synthesize(common, weights, synth_in, synth_out);
    if (classify->parsed())
      return cmd_classify(common, cls_weights, cls_in, cls_out);
    if (distort->parsed())
      return cmd_distort(common, dist_in, dist_out, dist_kind, dist_strength);
    if (evaluate->parsed())
      return cmd_evaluate(common, eval_gen, eval_ref, eval_labels, eval_out,
                          eval_extractor);
    if (gradcheck->parsed()) return cmd_gradcheck(common);
  } catch (const vtgan::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const vtgan::ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const vtgan::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
