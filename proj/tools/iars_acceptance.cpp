// Acceptance gate: runs every top-level criterion the library must satisfy
// and prints one verdict line per criterion. The exit code counts unexpected
// failures; a verdict marked "expected" documents a known, analyzed gap and
// does not fail the gate.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cli_app.hpp"

namespace fs = std::filesystem;
using iarscheck::CheckResult;

namespace {

struct Verdict {
  std::string tag;
  CheckResult r;
};

CheckResult merge(const std::string& name, const std::vector<CheckResult>& parts) {
  CheckResult out;
  out.name = name;
  out.pass = true;
  for (const auto& p : parts) {
    out.pass = out.pass && p.pass;
    if (!out.detail.empty()) out.detail += "; ";
    out.detail += p.name + (p.pass ? " ok" : " FAILED") + " (" + p.detail + ")";
  }
  return out;
}

// Drives a subcommand in-process with stdout/stderr captured; the transcript
// only surfaces when a step fails.
int quiet_cli(const std::vector<std::string>& args, std::string& transcript) {
  std::vector<const char*> argv{"iars"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  auto* prev_out = std::cout.rdbuf(sink.rdbuf());
  auto* prev_err = std::cerr.rdbuf(sink.rdbuf());
  int rc = -1;
  try {
    rc = iarscli::cli_main(static_cast<int>(argv.size()), argv.data());
  } catch (...) {
    std::cout.rdbuf(prev_out);
    std::cerr.rdbuf(prev_err);
    throw;
  }
  std::cout.rdbuf(prev_out);
  std::cerr.rdbuf(prev_err);
  transcript = sink.str();
  return rc;
}

double csv_tail(const std::string& path) {
  std::ifstream f(path);
  std::string line, last;
  std::getline(f, line);
  while (std::getline(f, line))
    if (!line.empty()) last = line;
  return std::stod(last.substr(last.rfind(',') + 1));
}

// Desk-scale end-to-end: synthetic corpus, reduced-width attention variant,
// held-out accuracy, single-image overfit, fixed wall-clock budget on one
// core. The baseline-vs-attention trend is reported but small-scale training
// noise may invert it, so it carries no verdict weight.
CheckResult check_desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = "desk-scale end to end";

  const fs::path root =
      fs::temp_directory_path() / ("iars_gate_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const auto at = [&](const std::string& rel) { return (root / rel).string(); };
  const std::string cfg = at("gate.json");
  std::ofstream(cfg) << R"({"seed": 7, "train": {"rotation_degrees": 0.0}})";

  std::string log;
  auto step = [&](const std::vector<std::string>& args) {
    const int rc = quiet_cli(args, log);
    if (rc != 0)
      throw std::runtime_error("subcommand '" + args[0] + "' exited " + std::to_string(rc) +
                               "\n" + log);
    return rc;
  };

  try {
    step({"synth", "--config", cfg, "--out", at("data")});
    step({"train", "--config", cfg, "--variant", "m4", "--data", at("data"), "--out",
          at("m4")});
    step({"predict", "--config", cfg, "--data", at("data"), "--checkpoint",
          at("m4/model.ckpt"), "--split", "val", "--out", at("pred_val")});
    step({"eval-region", "--config", cfg, "--pred", at("pred_val"), "--out", at("reg_val")});
    step({"predict", "--config", cfg, "--data", at("data"), "--checkpoint",
          at("m4/model.ckpt"), "--split", "test", "--out", at("pred_test")});
    step({"eval-region", "--config", cfg, "--pred", at("pred_test"), "--out",
          at("reg_test")});

    std::ifstream summary(at("m4/train_summary.json"));
    const auto sj = nlohmann::json::parse(summary);
    const double logged_val = sj.at("final_val_iou").get<double>();
    const double scored_val = csv_tail(at("reg_val/region_summary.csv"));
    const double held_out = csv_tail(at("reg_test/region_summary.csv"));
    const double consistency_gap = std::abs(scored_val - logged_val);

    // single-image overfit, library level: one sample, batch 1, no
    // augmentation, higher learning rate
    iars::ArchConfig arch;
    arch.input_h = 48;
    arch.input_w = 64;
    arch.depth = 4;
    arch.width_factor = 0.125;
    auto model = iars::build_model<float>(arch, iars::variant_flags("m4"), 7);
    const auto single = iars::synth_generate({.count = 1, .height = 48, .width = 64, .seed = 7});
    iars::TrainConfig tc;
    tc.batch_size = 1;
    tc.epochs = 1;
    tc.seed = 7;
    tc.learning_rate = 3e-3;
    tc.augment.hflip = false;
    tc.augment.rotation_degrees = 0.0;
    iars::OptimizerState<float> opt;
    double overfit = 0.0;
    int overfit_epochs = 0;
    for (int e = 1; e <= 150; ++e) {
      iars::train(model, single, {}, tc, {}, &opt);
      overfit_epochs = e;
      if (e % 10 == 0) {
        overfit = iars::mean_iou(model, single, 1);
        if (overfit >= 0.99) break;
      }
    }

    // informational trend: baseline vs full variant on the same held-out split
    step({"train", "--config", cfg, "--variant", "m1", "--data", at("data"), "--out",
          at("m1")});
    step({"predict", "--config", cfg, "--data", at("data"), "--checkpoint",
          at("m1/model.ckpt"), "--split", "test", "--out", at("pred_m1")});
    step({"eval-region", "--config", cfg, "--pred", at("pred_m1"), "--out", at("reg_m1")});
    const double m1_held_out = csv_tail(at("reg_m1/region_summary.csv"));

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                               .count();
    r.pass = held_out >= 0.85 && overfit >= 0.98 && consistency_gap <= 1e-6 &&
             elapsed <= 900.0;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "held-out IoU %.4f (>= 0.85), overfit IoU %.4f after %d epochs (>= 0.98), "
                  "eval matches train log within %.1e, %.0f s of 900; trend m1 %.4f vs m4 "
                  "%.4f (informational, %s)",
                  held_out, overfit, overfit_epochs, consistency_gap, elapsed, m1_held_out,
                  held_out, m1_held_out <= held_out ? "holds" : "inverted");
    r.detail = buf;
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = e.what();
  }
  fs::remove_all(root);
  return r;
}

}  // namespace

int main() {
  std::vector<Verdict> verdicts;
  verdicts.push_back({"1/8", iarscheck::check_gradient_suite()});
  verdicts.push_back({"2/8", iarscheck::check_region_oracle()});
  verdicts.push_back({"3a/8", iarscheck::check_disk_phi1()});
  verdicts.push_back({"3b/8", iarscheck::check_hu_invariances()});
  verdicts.push_back({"3c/8", iarscheck::check_ellipse_efd(true)});
  verdicts.push_back({"3d/8", iarscheck::check_efd_reconstruction()});
  verdicts.push_back({"4/8", iarscheck::check_stats_oracle()});
  verdicts.push_back({"5/8", iarscheck::check_parameter_parity()});
  verdicts.push_back({"6/8", check_desk_scale()});
  verdicts.push_back(
      {"7/8", merge("interpretability contracts", iarscheck::check_interpret_contracts())});
  verdicts.push_back({"8/8", merge("persistence", iarscheck::check_persistence())});

  int unexpected = 0;
  for (const auto& [tag, r] : verdicts) {
    const char* verdict = r.pass ? "PASS" : r.expected_failure ? "FAIL (expected)" : "FAIL";
    if (!r.pass && !r.expected_failure) ++unexpected;
    std::cout << "[" << tag << "] " << verdict << "  " << r.name << ": " << r.detail << "\n";
  }
  std::cout << (unexpected == 0 ? "acceptance gate OK" : "acceptance gate FAILED") << " ("
            << unexpected << " unexpected failures)\n";
  return unexpected;
}
