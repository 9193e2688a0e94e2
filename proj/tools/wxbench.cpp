// SPDX-License-Identifier: MIT
//
// wxbench: corrupt KITTI trees under a reproducibility manifest, evaluate
// detections, build RCE tables, run the fusion demo, render reports.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wxbench/bench.hpp"

namespace fs = std::filesystem;
using namespace wxbench;

namespace {

struct CorruptArgs {
  std::string in_dir, out_dir;
  std::string kind = "fog", severity = "low", branch = "both";
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string raw_params;
  std::string manifest;  // replay mode when set
};

struct EvaluateArgs {
  std::string gt_dir, det_dir;
  std::string class_name = "Car";
  std::vector<std::string> difficulties = {"easy", "moderate", "hard"};
  double iou_3d = 0.7;
  double iou_bev = 0.7;
  std::string out_csv;
  std::string curves_csv;
};

struct RceArgs {
  std::string clean_csv;
  std::vector<std::string> corrupt_csvs;
  std::string out_csv;
  std::string svg;
};

struct FusionArgs {
  std::string strategy = "sigmoid_gate";
  int n = 500, d = 8, m = 4, epochs = 400;
  double lr = 2.0;
  std::uint64_t seed = 100;
  int sweep = 1;
  std::string out_json;
};

struct ReportArgs {
  std::string rce_csv;
  std::string fusion_json;
  std::string out_md;
};

int run_corrupt(const CorruptArgs& a) {
  RunManifest m;
  if (!a.manifest.empty()) {
    m = cmd_replay(read_manifest(a.manifest), a.out_dir, a.jobs);
    std::printf("replayed %d frames -> %s (digest %s)\n", m.frame_count,
                a.out_dir.c_str(), m.content_digest.c_str());
    return 0;
  }
  CorruptOptions opts;
  opts.kind = weather_kind_from_string(a.kind);
  opts.severity = severity_from_string(a.severity);
  opts.branch_mode = branch_mode_from_string(a.branch);
  opts.seed = a.seed;
  opts.jobs = a.jobs;
  if (!a.raw_params.empty()) {
    try {
      opts.raw_params = nlohmann::json::parse(a.raw_params);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad --raw-params JSON: ") + e.what());
    }
  }
  m = cmd_corrupt(a.in_dir, a.out_dir, opts);
  std::printf("corrupted %d frames -> %s (digest %s)\n", m.frame_count,
              a.out_dir.c_str(), m.content_digest.c_str());
  return 0;
}

int run_evaluate(const EvaluateArgs& a) {
  EvalOptions opts;
  opts.class_name = a.class_name;
  opts.difficulties.clear();
  for (const std::string& d : a.difficulties) {
    opts.difficulties.push_back(difficulty_from_string(d));
  }
  opts.iou_3d = a.iou_3d;
  opts.iou_bev = a.iou_bev;
  const EvalReport report = cmd_evaluate(a.gt_dir, a.det_dir, opts);
  for (const EvalRow& r : report.rows) {
    std::printf("%s %-8s iou>=%.2f  AP %7.3f  (n_gt %d)\n", r.metric.c_str(),
                to_string(r.difficulty), r.iou_threshold, r.ap, r.n_gt);
  }
  if (!a.out_csv.empty()) write_eval_summary_csv(report, a.out_csv);
  if (!a.curves_csv.empty()) write_pr_curves_csv(report, a.curves_csv);
  return 0;
}

int run_rce(const RceArgs& a) {
  std::vector<fs::path> corrupt_paths(a.corrupt_csvs.begin(),
                                      a.corrupt_csvs.end());
  const auto rows = cmd_rce(a.clean_csv, corrupt_paths);
  for (const RceRow& r : rows) {
    std::printf("%-14s %s %-8s  clean %7.3f  corrupt %7.3f  RCE %.4f\n",
                r.corruption.c_str(), r.metric.c_str(),
                to_string(r.difficulty), r.ap_clean, r.ap_corrupt, r.rce);
  }
  if (!a.out_csv.empty()) write_rce_csv(rows, a.out_csv);
  if (!a.svg.empty()) write_rce_svg(rows, a.svg);
  return 0;
}

int run_fusion_demo(const FusionArgs& a) {
  FusionDemoOptions opts;
  opts.strategy = fusion_strategy_from_string(a.strategy);
  opts.n = a.n;
  opts.d = a.d;
  opts.m = a.m;
  opts.epochs = a.epochs;
  opts.lr = a.lr;
  opts.seed = a.seed;
  opts.sweep = a.sweep;
  const nlohmann::json report = cmd_fusion_demo(opts);
  if (a.out_json.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    std::ofstream out(a.out_json, std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + a.out_json + " for writing");
    out << report.dump(2) << '\n';
    if (!out) throw IoFailure("short write to " + a.out_json);
    std::printf("fusion demo report -> %s\n", a.out_json.c_str());
  }
  return 0;
}

int run_report(const ReportArgs& a) {
  std::optional<fs::path> rce_csv, fusion_json;
  if (!a.rce_csv.empty()) rce_csv = a.rce_csv;
  if (!a.fusion_json.empty()) fusion_json = a.fusion_json;
  cmd_report(rce_csv, fusion_json, a.out_md);
  std::printf("report -> %s\n", a.out_md.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weather-corruption robustness bench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));

  CorruptArgs ca;
  CLI::App* corrupt = app.add_subcommand(
      "corrupt", "corrupt a KITTI tree (or replay a manifest)");
  corrupt->add_option("--in", ca.in_dir, "input KITTI root");
  corrupt->add_option("--out", ca.out_dir, "output root (must not exist)")
      ->required();
  corrupt->add_option("--kind", ca.kind, "weather kind")
      ->check(CLI::IsMember({"fog", "rain", "snow", "sunlight"}));
  corrupt->add_option("--severity", ca.severity, "corruption severity")
      ->check(CLI::IsMember({"low", "high"}));
  corrupt->add_option("--branch", ca.branch, "which branch to corrupt")
      ->check(CLI::IsMember({"both", "lidar", "camera"}));
  corrupt->add_option("--seed", ca.seed, "global seed");
  corrupt->add_option("--jobs", ca.jobs, "worker threads")
      ->check(CLI::Range(1, 64));
  corrupt->add_option("--raw-params", ca.raw_params,
                      "JSON parameter overrides, recorded in the manifest");
  corrupt->add_option("--manifest", ca.manifest,
                      "replay this manifest instead of using the flags");

  EvaluateArgs ea;
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "AP evaluation of detections");
  evaluate->add_option("--gt", ea.gt_dir, "ground-truth KITTI root")
      ->required();
  evaluate->add_option("--det", ea.det_dir, "detection label directory")
      ->required();
  evaluate->add_option("--class", ea.class_name, "class name");
  evaluate->add_option("--difficulty", ea.difficulties,
                       "difficulties to evaluate")
      ->check(CLI::IsMember({"easy", "moderate", "hard"}));
  evaluate->add_option("--iou-3d", ea.iou_3d, "3D IoU threshold");
  evaluate->add_option("--iou-bev", ea.iou_bev, "BEV IoU threshold");
  evaluate->add_option("--out-csv", ea.out_csv, "summary CSV path");
  evaluate->add_option("--curves-csv", ea.curves_csv, "PR-curve CSV path");

  RceArgs ra;
  CLI::App* rce_cmd =
      app.add_subcommand("rce", "relative corruption error table");
  rce_cmd->add_option("--clean", ra.clean_csv, "clean evaluation CSV")
      ->required();
  rce_cmd->add_option("--corrupt", ra.corrupt_csvs,
                      "corrupted evaluation CSVs (label = file stem)")
      ->required();
  rce_cmd->add_option("--out-csv", ra.out_csv, "RCE table CSV path");
  rce_cmd->add_option("--svg", ra.svg, "grouped-bar SVG path");

  FusionArgs fa;
  CLI::App* fusion =
      app.add_subcommand("fusion-demo", "toy two-branch fusion training");
  fusion->add_option("--strategy", fa.strategy, "fusion strategy")
      ->check(CLI::IsMember({"sum", "sigmoid_gate", "cross_attention"}));
  fusion->add_option("--n", fa.n, "dataset size");
  fusion->add_option("--d", fa.d, "feature dimension");
  fusion->add_option("--m", fa.m, "cells per sample");
  fusion->add_option("--epochs", fa.epochs, "training epochs");
  fusion->add_option("--lr", fa.lr, "learning rate");
  fusion->add_option("--seed", fa.seed, "first dataset seed");
  fusion->add_option("--sweep", fa.sweep, "number of consecutive seeds")
      ->check(CLI::Range(1, 64));
  fusion->add_option("--out", fa.out_json, "report JSON path (default stdout)");

  ReportArgs pa;
  CLI::App* report = app.add_subcommand("report", "render a Markdown report");
  report->add_option("--rce", pa.rce_csv, "RCE table CSV");
  report->add_option("--fusion", pa.fusion_json, "fusion demo JSON");
  report->add_option("--out", pa.out_md, "output Markdown path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(corrupt)) {
      if (ca.manifest.empty() && ca.in_dir.empty()) {
        std::fprintf(stderr, "corrupt: need --in (or --manifest to replay)\n");
        return 2;
      }
      if (!ca.manifest.empty() && !ca.in_dir.empty()) {
        std::fprintf(stderr, "corrupt: --in and --manifest are exclusive\n");
        return 2;
      }
      return run_corrupt(ca);
    }
    if (app.got_subcommand(evaluate)) return run_evaluate(ea);
    if (app.got_subcommand(rce_cmd)) return run_rce(ra);
    if (app.got_subcommand(fusion)) return run_fusion_demo(fa);
    if (app.got_subcommand(report)) return run_report(pa);
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
