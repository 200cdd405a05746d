#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "iars/checkpoint.hpp"
#include "iars/contour_report.hpp"
#include "iars/dataset.hpp"
#include "iars/image.hpp"
#include "iars/interpret.hpp"
#include "iars/model.hpp"
#include "iars/region_metrics.hpp"
#include "iars/stats.hpp"
#include "iars/synth.hpp"
#include "iars/training.hpp"
#include "iars/version.hpp"

#include "checks.hpp"

namespace iarscli {

namespace fs = std::filesystem;
using nlohmann::json;

// Invocation mistakes: bad flags, broken config files, missing required
// arguments. These exit 2, everything else that throws exits 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Merged view of defaults, config file, and flag overrides. One height/width
// pair serves both the synthetic generator and the model input; external
// images are resized to it on load.
struct CliConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string variant = "m4";

  int count = 200;
  int height = 48;
  int width = 64;
  bool distractor_hair = false;
  double boundary_roughness = 0.2;
  double train_frac = 0.8;
  double val_frac = 0.1;

  int depth = 4;
  std::vector<int> stage_widths = {64, 128, 256, 512, 512};
  double width_factor = 0.125;
  bool use_batch_norm = true;

  double learning_rate = 1e-3;
  int epochs = 12;
  int batch_size = 8;
  std::string optimizer = "adam";
  double momentum = 0.9;
  bool augment_hflip = true;
  double rotation_degrees = 40.0;

  double alpha = 0.25;
  double gamma = 2.0;

  int harmonics = 100;
  double shrinkage = 0.1;
};

inline json config_to_json(const CliConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["variant"] = c.variant;
  j["dataset"] = {{"count", c.count},
                  {"height", c.height},
                  {"width", c.width},
                  {"distractor_hair", c.distractor_hair},
                  {"boundary_roughness", c.boundary_roughness},
                  {"train_frac", c.train_frac},
                  {"val_frac", c.val_frac}};
  j["arch"] = {{"depth", c.depth},
               {"stage_widths", c.stage_widths},
               {"width_factor", c.width_factor},
               {"use_batch_norm", c.use_batch_norm}};
  j["train"] = {{"learning_rate", c.learning_rate},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"optimizer", c.optimizer},
                {"momentum", c.momentum},
                {"augment_hflip", c.augment_hflip},
                {"rotation_degrees", c.rotation_degrees}};
  j["loss"] = {{"alpha", c.alpha}, {"gamma", c.gamma}};
  j["metrics"] = {{"harmonics", c.harmonics}, {"shrinkage", c.shrinkage}};
  return j;
}

namespace detail {

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw UsageError("config: unknown key '" + where + key + "'");
  }
}

template <typename V>
void take(const json& j, const std::string& where, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw UsageError("config: field '" + where + key + "' has the wrong type");
  }
}

}  // namespace detail

inline void apply_config_json(CliConfig& c, const json& j) {
  if (!j.is_object()) throw UsageError("config: top level must be a JSON object");
  detail::check_keys(j, "",
                     {"seed", "jobs", "variant", "dataset", "arch", "train", "loss", "metrics"});
  detail::take(j, "", "seed", c.seed);
  detail::take(j, "", "jobs", c.jobs);
  detail::take(j, "", "variant", c.variant);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    detail::check_keys(d, "dataset.",
                       {"count", "height", "width", "distractor_hair", "boundary_roughness",
                        "train_frac", "val_frac"});
    detail::take(d, "dataset.", "count", c.count);
    detail::take(d, "dataset.", "height", c.height);
    detail::take(d, "dataset.", "width", c.width);
    detail::take(d, "dataset.", "distractor_hair", c.distractor_hair);
    detail::take(d, "dataset.", "boundary_roughness", c.boundary_roughness);
    detail::take(d, "dataset.", "train_frac", c.train_frac);
    detail::take(d, "dataset.", "val_frac", c.val_frac);
  }
  if (j.contains("arch")) {
    const json& a = j.at("arch");
    detail::check_keys(a, "arch.", {"depth", "stage_widths", "width_factor", "use_batch_norm"});
    detail::take(a, "arch.", "depth", c.depth);
    detail::take(a, "arch.", "stage_widths", c.stage_widths);
    detail::take(a, "arch.", "width_factor", c.width_factor);
    detail::take(a, "arch.", "use_batch_norm", c.use_batch_norm);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::check_keys(t, "train.",
                       {"learning_rate", "epochs", "batch_size", "optimizer", "momentum",
                        "augment_hflip", "rotation_degrees"});
    detail::take(t, "train.", "learning_rate", c.learning_rate);
    detail::take(t, "train.", "epochs", c.epochs);
    detail::take(t, "train.", "batch_size", c.batch_size);
    detail::take(t, "train.", "optimizer", c.optimizer);
    detail::take(t, "train.", "momentum", c.momentum);
    detail::take(t, "train.", "augment_hflip", c.augment_hflip);
    detail::take(t, "train.", "rotation_degrees", c.rotation_degrees);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    detail::check_keys(l, "loss.", {"alpha", "gamma"});
    detail::take(l, "loss.", "alpha", c.alpha);
    detail::take(l, "loss.", "gamma", c.gamma);
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    detail::check_keys(m, "metrics.", {"harmonics", "shrinkage"});
    detail::take(m, "metrics.", "harmonics", c.harmonics);
    detail::take(m, "metrics.", "shrinkage", c.shrinkage);
  }
}

inline void load_config_file(CliConfig& c, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw UsageError("config " + path + ": malformed JSON at line " + std::to_string(line) +
                     ", column " + std::to_string(col));
  }
  apply_config_json(c, j);
}

inline iars::ArchConfig arch_of(const CliConfig& c) {
  iars::ArchConfig a;
  a.input_channels = 3;
  a.input_h = c.height;
  a.input_w = c.width;
  a.depth = c.depth;
  a.stage_widths = c.stage_widths;
  a.width_factor = c.width_factor;
  a.use_batch_norm = c.use_batch_norm;
  return a;
}

inline iars::Optimizer optimizer_of(const CliConfig& c) {
  if (c.optimizer == "adam") return iars::Optimizer::adam;
  if (c.optimizer == "sgd_momentum") return iars::Optimizer::sgd_momentum;
  throw UsageError("config: optimizer must be 'adam' or 'sgd_momentum', got '" + c.optimizer +
                   "'");
}

inline iars::TrainConfig train_config_of(const CliConfig& c) {
  iars::TrainConfig t;
  t.learning_rate = c.learning_rate;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.seed = c.seed;
  t.optimizer = optimizer_of(c);
  t.augment.hflip = c.augment_hflip;
  t.augment.rotation_degrees = c.rotation_degrees;
  t.momentum = c.momentum;
  return t;
}

inline iars::FocalLossParams focal_of(const CliConfig& c) { return {c.alpha, c.gamma}; }

// Output directory for one command run. Collects the relative names of
// produced files so finish() can drop a manifest next to them.
class RunDir {
 public:
  explicit RunDir(const std::string& dir) : dir_(dir) {
    if (dir.empty()) throw UsageError("missing --out DIR");
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  std::string file(const std::string& rel) {
    files_.push_back(rel);
    return (dir_ / rel).string();
  }

  // For files written off-thread: path without recording; note() records.
  std::string path_of(const std::string& rel) const { return (dir_ / rel).string(); }
  void note(const std::string& rel) { files_.push_back(rel); }

  void write_text(const std::string& rel, const std::string& text) {
    const std::string p = file(rel);
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p);
    f << text;
  }

  void write_json(const std::string& rel, const json& j) { write_text(rel, j.dump(2) + "\n"); }

  void finish(const std::string& command, const CliConfig& cfg) {
    write_json("config.resolved.json", config_to_json(cfg));
    files_.push_back("run_manifest.json");
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    json man{{"command", command}, {"files", files_}};
    std::ofstream f(dir_ / "run_manifest.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write run_manifest.json");
    f << man.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

// Striped worker pool: worker t handles items t, t+jobs, ... Each worker gets
// its own index stream, so outputs land in per-item slots deterministically
// regardless of scheduling.
template <typename MakeWorker>
void run_striped(int n, int jobs, MakeWorker make_worker) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    auto work = make_worker();
    for (int i = 0; i < n; ++i) work(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&, t] {
      try {
        auto work = make_worker();
        for (int i = t; i < n; i += jobs) work(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Manifest records with paths resolved against the manifest's directory.
inline iars::DatasetManifest resolve_manifest(const std::string& manifest_path) {
  fs::path p(manifest_path);
  if (fs::is_directory(p)) p /= "manifest.jsonl";
  iars::DatasetManifest man = iars::load_manifest(p.string(), false);
  const fs::path base = p.parent_path();
  for (auto& r : man.records) {
    r.image = (base / r.image).string();
    r.mask = (base / r.mask).string();
    if (!fs::exists(r.image)) throw std::runtime_error("manifest references missing " + r.image);
    if (!fs::exists(r.mask)) throw std::runtime_error("manifest references missing " + r.mask);
  }
  return man;
}

inline std::vector<iars::ManifestRecord> split_records(const iars::DatasetManifest& man,
                                                       const std::string& split) {
  if (!iars::valid_split_name(split))
    throw UsageError("--split must be train, val, or test, got '" + split + "'");
  auto recs = man.split(split);
  if (recs.empty()) throw std::runtime_error("manifest has no '" + split + "' records");
  return recs;
}

inline iars::Sample load_resized(const iars::ManifestRecord& rec, int h, int w) {
  iars::Sample s{iars::read_ppm(rec.image), iars::read_pgm(rec.mask)};
  if (s.image.height != h || s.image.width != w) s.image = iars::resize_bilinear(s.image, h, w);
  if (s.mask.height != h || s.mask.width != w) s.mask = iars::resize_nearest(s.mask, h, w);
  return s;
}

inline std::string image_id(const iars::ManifestRecord& rec) {
  return fs::path(rec.image).stem().string();
}

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_synth(const CliConfig& cfg, const std::string& out) {
  RunDir run(out);
  iars::SyntheticGenConfig g;
  g.count = cfg.count;
  g.height = cfg.height;
  g.width = cfg.width;
  g.seed = cfg.seed;
  g.distractor_hair = cfg.distractor_hair;
  g.boundary_roughness = cfg.boundary_roughness;
  const auto samples = iars::synth_generate(g);
  const iars::DatasetManifest man =
      iars::save_dataset(run.dir().string(), samples, cfg.train_frac, cfg.val_frac);
  for (const auto& r : man.records) {
    run.note(r.image);
    run.note(r.mask);
  }
  run.note("manifest.jsonl");
  run.finish("synth", cfg);
  int n_train = 0, n_val = 0, n_test = 0;
  for (const auto& r : man.records) {
    n_train += r.split == "train";
    n_val += r.split == "val";
    n_test += r.split == "test";
  }
  std::cout << "wrote " << man.records.size() << " samples (" << n_train << " train, " << n_val
            << " val, " << n_test << " test) to " << out << "\n";
  return 0;
}

inline int cmd_train(const CliConfig& cfg, const std::string& out, const std::string& data) {
  if (data.empty()) throw UsageError("train: missing --data MANIFEST");
  RunDir run(out);
  const iars::DatasetManifest man = resolve_manifest(data);
  const auto train_recs = split_records(man, "train");
  const auto val_recs = man.split("val");

  std::vector<iars::Sample> train_set, val_set;
  for (const auto& r : train_recs) train_set.push_back(load_resized(r, cfg.height, cfg.width));
  for (const auto& r : val_recs) val_set.push_back(load_resized(r, cfg.height, cfg.width));

  auto model =
      iars::build_model<float>(arch_of(cfg), iars::variant_flags(cfg.variant), cfg.seed);
  iars::OptimizerState<float> opt;
  const iars::TrainLog log =
      iars::train(model, train_set, val_set, train_config_of(cfg), focal_of(cfg), &opt);

  iars::save_checkpoint(model, run.file("model.ckpt"), cfg.epochs, &opt, optimizer_of(cfg));
  std::string csv = "epoch,train_loss,val_iou\n";
  for (const auto& r : log.rows) {
    csv += std::to_string(r.epoch) + "," + fmt("%.9f", r.train_loss) + "," +
           fmt("%.9f", r.val_iou) + "\n";
    std::cout << "epoch " << r.epoch << " loss " << fmt("%.6f", r.train_loss) << " val_iou "
              << fmt("%.6f", r.val_iou) << "\n";
  }
  run.write_text("train_log.csv", csv);
  run.write_json("train_summary.json",
                 json{{"variant", cfg.variant},
                      {"parameters", iars::parameter_count(model)},
                      {"epochs", cfg.epochs},
                      {"train_images", train_set.size()},
                      {"val_images", val_set.size()},
                      {"final_train_loss", log.rows.empty() ? 0.0 : log.rows.back().train_loss},
                      {"final_val_iou", log.rows.empty() ? 0.0 : log.rows.back().val_iou}});
  run.finish("train", cfg);
  return 0;
}

inline int cmd_predict(const CliConfig& cfg, const std::string& out, const std::string& data,
                       const std::string& checkpoint, const std::string& split) {
  if (data.empty()) throw UsageError("predict: missing --data MANIFEST");
  if (checkpoint.empty()) throw UsageError("predict: missing --checkpoint PATH");
  RunDir run(out);
  const auto model = iars::load_model<float>(checkpoint);
  const int H = model.config.input_h, W = model.config.input_w;
  const iars::DatasetManifest man = resolve_manifest(data);
  const auto recs = split_records(man, split);
  const int n = static_cast<int>(recs.size());

  std::vector<std::string> pred_names(static_cast<std::size_t>(n));
  run_striped(n, cfg.jobs, [&] {
    auto local = model;
    auto batch = iars::Tensor<float>::zeros({1, 3, H, W});
    return [&, local, batch](int i) mutable {
      const auto s = load_resized(recs[static_cast<std::size_t>(i)], H, W);
      iars::fill_image(batch, 0, s.image);
      const auto probs = local.forward(batch, false);
      const iars::BinaryMask pred = iars::mask_from_tensor(probs, 0);
      const std::string name = image_id(recs[static_cast<std::size_t>(i)]) + "_pred.pgm";
      iars::write_pgm(run.path_of(name), pred);
      pred_names[static_cast<std::size_t>(i)] = name;
    };
  });

  std::string lines;
  for (int i = 0; i < n; ++i) {
    run.note(pred_names[static_cast<std::size_t>(i)]);
    json rec{{"id", image_id(recs[static_cast<std::size_t>(i)])},
             {"truth", fs::absolute(recs[static_cast<std::size_t>(i)].mask).string()},
             {"pred", pred_names[static_cast<std::size_t>(i)]}};
    lines += rec.dump() + "\n";
  }
  run.write_text("predictions.jsonl", lines);
  run.write_json("predict_meta.json", json{{"variant", iars::variant_name(model.flags)},
                                           {"split", split},
                                           {"count", n},
                                           {"height", H},
                                           {"width", W}});
  run.finish("predict", cfg);
  std::cout << "wrote " << n << " prediction masks to " << out << "\n";
  return 0;
}

struct PredictionSet {
  std::string variant;
  std::vector<std::string> ids;
  std::vector<iars::BinaryMask> truths;
  std::vector<iars::BinaryMask> preds;
};

inline PredictionSet load_predictions(const std::string& pred_dir, const std::string& fallback) {
  const fs::path dir(pred_dir);
  const fs::path list = dir / "predictions.jsonl";
  std::ifstream f(list, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + list.string() + " (run predict first)");
  PredictionSet set;
  set.variant = fallback;
  const fs::path meta_path = dir / "predict_meta.json";
  if (fs::exists(meta_path)) {
    std::ifstream mf(meta_path, std::ios::binary);
    json meta = json::parse(std::string((std::istreambuf_iterator<char>(mf)),
                                        std::istreambuf_iterator<char>()));
    if (meta.contains("variant")) set.variant = meta.at("variant").get<std::string>();
  }
  std::string line;
  while (std::getline(f, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json rec = json::parse(line);
    set.ids.push_back(rec.at("id").get<std::string>());
    iars::BinaryMask truth = iars::read_pgm(rec.at("truth").get<std::string>());
    iars::BinaryMask pred =
        iars::read_pgm((dir / rec.at("pred").get<std::string>()).string());
    // predictions live in model space; score them in ground-truth space
    if (pred.height != truth.height || pred.width != truth.width)
      pred = iars::resize_nearest(pred, truth.height, truth.width);
    set.truths.push_back(std::move(truth));
    set.preds.push_back(std::move(pred));
  }
  if (set.ids.empty()) throw std::runtime_error("predictions.jsonl is empty");
  return set;
}

inline int cmd_eval_region(const CliConfig& cfg, const std::string& out,
                           const std::string& pred_dir) {
  if (pred_dir.empty()) throw UsageError("eval-region: missing --pred DIR");
  RunDir run(out);
  const PredictionSet set = load_predictions(pred_dir, cfg.variant);
  const int n = static_cast<int>(set.ids.size());

  std::vector<iars::RegionReport> reports(static_cast<std::size_t>(n));
  run_striped(n, cfg.jobs, [&] {
    return [&](int i) {
      reports[static_cast<std::size_t>(i)] = iars::region_report(
          set.truths[static_cast<std::size_t>(i)], set.preds[static_cast<std::size_t>(i)]);
    };
  });

  std::string per = "image_id,tpr,fpr,tnr,fnr,dice,iou\n";
  json per_json = json::array();
  for (int i = 0; i < n; ++i) {
    const auto& r = reports[static_cast<std::size_t>(i)];
    per += set.ids[static_cast<std::size_t>(i)] + "," + fmt("%.6f", r.tpr) + "," +
           fmt("%.6f", r.fpr) + "," + fmt("%.6f", r.tnr) + "," + fmt("%.6f", r.fnr) + "," +
           fmt("%.6f", r.dice) + "," + fmt("%.6f", r.iou) + "\n";
    per_json.push_back(json{{"id", set.ids[static_cast<std::size_t>(i)]},
                            {"tpr", r.tpr},
                            {"fpr", r.fpr},
                            {"tnr", r.tnr},
                            {"fnr", r.fnr},
                            {"dice", r.dice},
                            {"iou", r.iou}});
  }
  const iars::RegionReport mean = iars::aggregate(reports);
  run.write_text("region_per_image.csv", per);
  run.write_text("region_summary.csv",
                 iars::region_csv_header() + "\n" + iars::region_csv_row(set.variant, mean) + "\n");
  run.write_json("region_report.json", json{{"variant", set.variant},
                                            {"count", n},
                                            {"mean",
                                             {{"tpr", mean.tpr},
                                              {"fpr", mean.fpr},
                                              {"tnr", mean.tnr},
                                              {"fnr", mean.fnr},
                                              {"dice", mean.dice},
                                              {"iou", mean.iou}}},
                                            {"per_image", per_json}});
  run.finish("eval-region", cfg);
  std::cout << set.variant << ": mean IoU " << fmt("%.6f", mean.iou) << ", Dice "
            << fmt("%.6f", mean.dice) << " over " << n << " images\n";
  return 0;
}

inline int cmd_eval_contour(const CliConfig& cfg, const std::string& out,
                            const std::string& pred_dir) {
  if (pred_dir.empty()) throw UsageError("eval-contour: missing --pred DIR");
  RunDir run(out);
  const PredictionSet set = load_predictions(pred_dir, cfg.variant);
  const iars::ContourReport rep =
      iars::contour_report(set.truths, set.preds, cfg.harmonics, cfg.shrinkage);

  std::string per = iars::contour_csv_header() + "\n";
  json per_json = json::array();
  for (const auto& r : rep.rows) {
    per += iars::contour_csv_row(r) + "\n";
    per_json.push_back(json{{"index", r.image_id},
                            {"id", set.ids[static_cast<std::size_t>(r.image_id)]},
                            {"efd_mahalanobis", r.efd_mahalanobis},
                            {"efd_euclidean", r.efd_euclidean},
                            {"hu_euclidean", r.hu_euclidean},
                            {"hu_mahalanobis", r.hu_mahalanobis}});
  }
  run.write_text("contour_per_image.csv", per);
  run.write_json("contour_report.json",
                 json{{"variant", set.variant},
                      {"count", set.ids.size()},
                      {"excluded", rep.excluded},
                      {"harmonics", cfg.harmonics},
                      {"shrinkage", cfg.shrinkage},
                      {"mean",
                       {{"efd_mahalanobis", rep.mean_efd_mahalanobis},
                        {"efd_euclidean", rep.mean_efd_euclidean},
                        {"hu_euclidean", rep.mean_hu_euclidean},
                        {"hu_mahalanobis", rep.mean_hu_mahalanobis}}},
                      {"per_image", per_json}});
  run.finish("eval-contour", cfg);
  std::cout << set.variant << ": mean EFD (Mahalanobis) " << fmt("%.4f", rep.mean_efd_mahalanobis)
            << ", mean Hu (Euclidean) " << fmt("%.4f", rep.mean_hu_euclidean) << ", "
            << rep.excluded << " pairs excluded\n";
  return 0;
}

inline std::vector<double> csv_column(const std::string& path, const std::string& column) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + " is empty");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  std::vector<std::string> header;
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) header.push_back(cell);
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end())
    throw UsageError("column '" + column + "' not found in " + path + " (header: " + line + ")");
  const std::size_t idx = static_cast<std::size_t>(it - header.begin());
  std::vector<double> values;
  while (std::getline(f, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::stringstream ls(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (idx >= cells.size()) throw std::runtime_error(path + ": short row '" + line + "'");
    try {
      values.push_back(std::stod(cells[idx]));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": non-numeric value '" + cells[idx] + "' in column " +
                               column);
    }
  }
  if (values.empty()) throw std::runtime_error(path + " has no data rows");
  return values;
}

inline int cmd_stats_compare(const CliConfig& cfg, const std::string& out,
                             const std::string& report_a, const std::string& report_b,
                             const std::string& column) {
  if (report_a.empty() || report_b.empty())
    throw UsageError("stats-compare: need --report-a CSV and --report-b CSV");
  RunDir run(out);
  const std::vector<double> x = csv_column(report_a, column);
  const std::vector<double> y = csv_column(report_b, column);
  const iars::RankSumResult r = iars::rank_sum_test(x, y);
  const char* method = r.method == iars::RankSumMethod::exact ? "exact" : "normal";
  // keep the recorded paths relative (parent/name) so identical pipelines
  // produce identical bytes regardless of where the run tree lives
  auto tail = [](const std::string& p) {
    const fs::path fp(p);
    const auto parent = fp.parent_path().filename().string();
    return parent.empty() ? fp.filename().string()
                          : parent + "/" + fp.filename().string();
  };
  run.write_json("stats.json", json{{"column", column},
                                    {"report_a", tail(report_a)},
                                    {"report_b", tail(report_b)},
                                    {"n", x.size()},
                                    {"m", y.size()},
                                    {"u_statistic", r.u_statistic},
                                    {"z", r.z},
                                    {"p_two_sided", r.p_two_sided},
                                    {"method", method}});
  run.finish("stats-compare", cfg);
  std::cout << "rank-sum on '" << column << "': U = " << r.u_statistic
            << ", p = " << fmt("%.6g", r.p_two_sided) << " (" << method << ", n = " << x.size()
            << ", m = " << y.size() << ")\n";
  return 0;
}

namespace detail {

inline std::string label_slug(const std::string& label) {
  std::string s;
  for (char ch : label) s += ch == ' ' ? '_' : static_cast<char>(std::tolower(ch));
  return s;
}

inline iars::RgbImage gray_image(const iars::MipImage& m) {
  iars::RgbImage im = iars::RgbImage::filled(m.height, m.width, 0, 0, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int c = 0; c < 3; ++c) im.at(y, x, c) = static_cast<float>(m.at(y, x));
  return im;
}

}  // namespace detail

inline int cmd_interpret(const CliConfig& cfg, const std::string& out, const std::string& data,
                         const std::vector<std::string>& checkpoints, const std::string& split,
                         int limit) {
  if (data.empty()) throw UsageError("interpret: missing --data MANIFEST");
  if (checkpoints.empty()) throw UsageError("interpret: missing --checkpoint PATH");
  RunDir run(out);
  std::vector<iars::SegModel<float>> models;
  for (const auto& p : checkpoints) models.push_back(iars::load_model<float>(p));
  const int H = models.back().config.input_h, W = models.back().config.input_w;
  const int depth = models.back().config.depth;

  const iars::DatasetManifest man = resolve_manifest(data);
  auto recs = split_records(man, split);
  if (limit > 0 && static_cast<int>(recs.size()) > limit)
    recs.resize(static_cast<std::size_t>(limit));
  const int n = static_cast<int>(recs.size());

  std::vector<std::vector<std::string>> names(static_cast<std::size_t>(n));
  std::vector<json> image_json(static_cast<std::size_t>(n));
  run_striped(n, cfg.jobs, [&] {
    auto local = models;
    auto batch = iars::Tensor<float>::zeros({1, 3, H, W});
    return [&, local, batch](int i) mutable {
      const auto& rec = recs[static_cast<std::size_t>(i)];
      const std::string id = image_id(rec);
      const iars::Sample s = load_resized(rec, H, W);
      auto& out_names = names[static_cast<std::size_t>(i)];
      json info{{"id", id}};

      iars::fill_image(batch, 0, s.image);
      auto& mip_model = local.back();
      mip_model.forward(batch, false, true);
      std::vector<iars::MipImage> mips;
      json blocks = json::array();
      for (std::size_t b = 0; b < mip_model.captured_blocks.size(); ++b) {
        const bool enc = b < static_cast<std::size_t>(depth);
        const std::size_t k = enc ? b + 1 : b + 1 - static_cast<std::size_t>(depth);
        const std::string label = (enc ? "Convolutional block " : "Deconvolutional block ") +
                                  std::to_string(k);
        mips.push_back(iars::mip(mip_model.captured_blocks[b], label));
        const std::string name = id + "_" + detail::label_slug(label) + ".ppm";
        iars::write_ppm(run.path_of(name), detail::gray_image(mips.back()));
        out_names.push_back(name);
        blocks.push_back(label);
      }
      info["blocks"] = blocks;
      const std::string grid_name = id + "_mip_grid.ppm";
      iars::render_mip_grid(mips, run.path_of(grid_name));
      out_names.push_back(grid_name);
      info["mip_grid"] = grid_name;
      for (std::size_t g = 0; g < mip_model.attention_maps.size(); ++g) {
        const std::string name = id + "_attention_gate_" + std::to_string(g + 1) + ".ppm";
        iars::write_ppm(run.path_of(name),
                        detail::gray_image(iars::mip(mip_model.attention_maps[g])));
        out_names.push_back(name);
      }

      if (local.size() >= 2) {
        const iars::ProgressionReport prog = iars::variant_progression(local, s.image, &s.mask);
        json variants = json::array(), ious = json::array(), panels = json::array();
        for (const auto& m : local) variants.push_back(iars::variant_name(m.flags));
        for (double v : prog.iou) ious.push_back(v);
        for (const auto& step : prog.steps) {
          const std::string name =
              id + "_diff_" + step.panel.base_label + "_" + step.panel.refined_label + ".ppm";
          iars::render_panel(s.image, step.panel, run.path_of(name));
          out_names.push_back(name);
          panels.push_back(name);
        }
        info["progression"] = json{{"variants", variants}, {"iou", ious}, {"panels", panels}};
      }
      image_json[static_cast<std::size_t>(i)] = std::move(info);
    };
  });

  json images = json::array();
  for (int i = 0; i < n; ++i) {
    for (const auto& name : names[static_cast<std::size_t>(i)]) run.note(name);
    images.push_back(std::move(image_json[static_cast<std::size_t>(i)]));
  }
  json variants = json::array();
  for (const auto& m : models) variants.push_back(iars::variant_name(m.flags));
  run.write_json("interpret.json", json{{"checkpoint_variants", variants}, {"images", images}});
  run.finish("interpret", cfg);
  std::cout << "wrote interpretability panels for " << n << " images to " << out << "\n";
  return 0;
}

inline int cmd_report(const CliConfig& cfg, const std::string& out,
                      const std::vector<std::string>& runs) {
  if (runs.empty()) throw UsageError("report: need at least one --run DIR");
  RunDir run(out);
  json region = json::array(), contour = json::array(), stats = json::array();
  auto read_if = [](const fs::path& p, json& into) {
    if (!fs::exists(p)) return false;
    std::ifstream f(p, std::ios::binary);
    into = json::parse(std::string((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>()));
    return true;
  };
  for (const auto& r : runs) {
    json j;
    if (read_if(fs::path(r) / "region_report.json", j)) region.push_back(j);
    if (read_if(fs::path(r) / "contour_report.json", j)) contour.push_back(j);
    if (read_if(fs::path(r) / "stats.json", j)) stats.push_back(j);
  }
  if (region.empty() && contour.empty() && stats.empty())
    throw std::runtime_error("report: no region/contour/stats reports found in the given runs");

  std::string md = "# Segmentation report\n";
  if (!region.empty()) {
    md += "\n## Region metrics\n\n| Model | IoU | Dice | TPR | TNR | FPR | FNR | Images |\n";
    md += "|---|---|---|---|---|---|---|---|\n";
    for (const auto& j : region) {
      const json& m = j.at("mean");
      md += "| " + j.at("variant").get<std::string>() + " | " +
            fmt("%.4f", m.at("iou").get<double>()) + " | " +
            fmt("%.4f", m.at("dice").get<double>()) + " | " +
            fmt("%.4f", m.at("tpr").get<double>()) + " | " +
            fmt("%.4f", m.at("tnr").get<double>()) + " | " +
            fmt("%.4f", m.at("fpr").get<double>()) + " | " +
            fmt("%.4f", m.at("fnr").get<double>()) + " | " +
            std::to_string(j.at("count").get<int>()) + " |\n";
    }
  }
  if (!contour.empty()) {
    md += "\n## Contour metrics\n\n";
    md += "| Model | EFD (Mahalanobis) | EFD (Euclidean) | Hu (Euclidean) | Hu (Mahalanobis) | "
          "Excluded |\n|---|---|---|---|---|---|\n";
    for (const auto& j : contour) {
      const json& m = j.at("mean");
      md += "| " + j.at("variant").get<std::string>() + " | " +
            fmt("%.4f", m.at("efd_mahalanobis").get<double>()) + " | " +
            fmt("%.4f", m.at("efd_euclidean").get<double>()) + " | " +
            fmt("%.4f", m.at("hu_euclidean").get<double>()) + " | " +
            fmt("%.4f", m.at("hu_mahalanobis").get<double>()) + " | " +
            std::to_string(j.at("excluded").get<int>()) + " |\n";
    }
  }
  if (!stats.empty()) {
    md += "\n## Significance\n\n| Column | U | p (two-sided) | Method | n | m |\n";
    md += "|---|---|---|---|---|---|\n";
    for (const auto& j : stats)
      md += "| " + j.at("column").get<std::string>() + " | " +
            fmt("%.1f", j.at("u_statistic").get<double>()) + " | " +
            fmt("%.6g", j.at("p_two_sided").get<double>()) + " | " +
            j.at("method").get<std::string>() + " | " + std::to_string(j.at("n").get<int>()) +
            " | " + std::to_string(j.at("m").get<int>()) + " |\n";
  }
  run.write_text("report.md", md);
  run.write_json("report.json",
                 json{{"region", region}, {"contour", contour}, {"stats", stats}});
  run.finish("report", cfg);
  std::cout << "merged " << region.size() << " region, " << contour.size() << " contour, "
            << stats.size() << " stats reports into " << out << "\n";
  return 0;
}

// Runs the oracle suite. --out is optional here; when given, the verdicts are
// also recorded as selftest.json in the run directory.
inline int cmd_selftest(const CliConfig& cfg, const std::string& out) {
  const auto results = iarscheck::run_selftest();
  int failed = 0;
  json rows = json::array();
  for (const auto& r : results) {
    if (!r.pass && !r.expected_failure) ++failed;
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << ": " << r.detail << "\n";
    rows.push_back(json{{"name", r.name},
                        {"pass", r.pass},
                        {"expected_failure", r.expected_failure},
                        {"detail", r.detail}});
  }
  std::cout << (failed == 0 ? "selftest OK" : "selftest FAILED") << " ("
            << results.size() - static_cast<std::size_t>(failed) << "/" << results.size()
            << " checks)\n";
  if (!out.empty()) {
    RunDir run(out);
    run.write_json("selftest.json", json{{"failed", failed}, {"checks", rows}});
    run.finish("selftest", cfg);
  }
  return failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Segmentation laboratory: synthetic data, SegNet-family training, region and "
               "contour evaluation, and interpretability renders",
               "iars"};
  app.require_subcommand(0, 1);
  app.set_version_flag("--version", std::string(iars::version()));

  std::string config_path, out_dir;
  app.add_option("--config", config_path, "JSON config file (defaults < file < flags)");
  app.add_option("--out", out_dir, "output directory for this run");

  // flag overrides; only flags the user passed beat the config file
  std::uint64_t seed = 0;
  std::string variant;
  double width_factor = 0, alpha = 0, gamma = 0, shrinkage = 0, learning_rate = 0;
  int epochs = 0, harmonics = 0, jobs = 0, count = 0, batch_size = 0;
  auto* seed_opt = app.add_option("--seed", seed, "rng seed for data, init, and training");
  auto* variant_opt =
      app.add_option("--variant", variant, "model variant")->check(CLI::IsMember({"m1", "m2", "m3", "m4"}));
  auto* wf_opt = app.add_option("--width-factor", width_factor, "channel width multiplier");
  auto* epochs_opt = app.add_option("--epochs", epochs, "training epochs");
  auto* alpha_opt = app.add_option("--alpha", alpha, "focal loss class weight");
  auto* gamma_opt = app.add_option("--gamma", gamma, "focal loss focusing exponent");
  auto* harm_opt = app.add_option("--harmonics", harmonics, "elliptic Fourier harmonics");
  auto* shrink_opt = app.add_option("--shrinkage", shrinkage, "covariance shrinkage intensity");
  auto* jobs_opt = app.add_option("--jobs", jobs, "worker threads for per-image stages");
  auto* count_opt = app.add_option("--count", count, "synthetic dataset size");
  auto* lr_opt = app.add_option("--learning-rate", learning_rate, "optimizer step size");
  auto* batch_opt = app.add_option("--batch-size", batch_size, "training batch size");

  std::string data, checkpoint_one, split = "val", pred_dir, report_a, report_b, column = "iou";
  std::vector<std::string> checkpoints, runs;
  int limit = 4;

  auto* synth = app.add_subcommand("synth", "generate a synthetic lesion dataset");
  auto* train = app.add_subcommand("train", "train a variant and write checkpoint + log");
  train->add_option("--data", data, "dataset manifest (file or directory)");
  auto* predict = app.add_subcommand("predict", "write predicted masks for a split");
  predict->add_option("--data", data, "dataset manifest (file or directory)");
  predict->add_option("--checkpoint", checkpoint_one, "trained model checkpoint");
  predict->add_option("--split", split, "manifest split to predict (train/val/test)");
  auto* eval_region = app.add_subcommand("eval-region", "pixel-overlap metrics for predictions");
  eval_region->add_option("--pred", pred_dir, "predict run directory");
  auto* eval_contour = app.add_subcommand("eval-contour", "shape-descriptor metrics for predictions");
  eval_contour->add_option("--pred", pred_dir, "predict run directory");
  auto* stats_cmp = app.add_subcommand("stats-compare", "rank-sum test between two report columns");
  stats_cmp->add_option("--report-a", report_a, "first per-image CSV report");
  stats_cmp->add_option("--report-b", report_b, "second per-image CSV report");
  stats_cmp->add_option("--column", column, "CSV column to compare");
  auto* interpret = app.add_subcommand("interpret", "MIP grids and variant diff panels");
  interpret->add_option("--data", data, "dataset manifest (file or directory)");
  interpret->add_option("--checkpoint", checkpoints, "checkpoint, repeat in refinement order");
  interpret->add_option("--split", split, "manifest split to visualize");
  interpret->add_option("--limit", limit, "max images to render (0 = all)");
  auto* report = app.add_subcommand("report", "merge evaluation runs into one summary");
  report->add_option("--run", runs, "evaluation run directory, repeatable");
  auto* selftest = app.add_subcommand("selftest", "run gradient checks and metric oracles");
  for (auto* sub : {synth, train, predict, eval_region, eval_contour, stats_cmp, interpret,
                    report, selftest})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (app.get_subcommands().empty())
      throw UsageError("no subcommand given (expected one of: synth, train, predict, "
                       "eval-region, eval-contour, stats-compare, interpret, report, selftest)");
    CliConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (variant_opt->count()) cfg.variant = variant;
    if (wf_opt->count()) cfg.width_factor = width_factor;
    if (epochs_opt->count()) cfg.epochs = epochs;
    if (alpha_opt->count()) cfg.alpha = alpha;
    if (gamma_opt->count()) cfg.gamma = gamma;
    if (harm_opt->count()) cfg.harmonics = harmonics;
    if (shrink_opt->count()) cfg.shrinkage = shrinkage;
    if (jobs_opt->count()) cfg.jobs = jobs;
    if (count_opt->count()) cfg.count = count;
    if (lr_opt->count()) cfg.learning_rate = learning_rate;
    if (batch_opt->count()) cfg.batch_size = batch_size;
    if (cfg.jobs < 1) throw UsageError("--jobs must be at least 1");

    if (app.got_subcommand(synth)) return cmd_synth(cfg, out_dir);
    if (app.got_subcommand(train)) return cmd_train(cfg, out_dir, data);
    if (app.got_subcommand(predict))
      return cmd_predict(cfg, out_dir, data, checkpoint_one, split);
    if (app.got_subcommand(eval_region)) return cmd_eval_region(cfg, out_dir, pred_dir);
    if (app.got_subcommand(eval_contour)) return cmd_eval_contour(cfg, out_dir, pred_dir);
    if (app.got_subcommand(stats_cmp))
      return cmd_stats_compare(cfg, out_dir, report_a, report_b, column);
    if (app.got_subcommand(interpret))
      return cmd_interpret(cfg, out_dir, data, checkpoints, split, limit);
    if (app.got_subcommand(report)) return cmd_report(cfg, out_dir, runs);
    if (app.got_subcommand(selftest)) return cmd_selftest(cfg, out_dir);
    throw UsageError("unknown subcommand");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nRun 'iars --help' for usage.\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace iarscli
