// Command-line front end: track, simulate, synth-pairs, eval, report, make-demo.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "edtrack/io/ply.hpp"
#include "edtrack/pair_synthesis.hpp"
#include "edtrack/pipeline/synthetic.hpp"
#include "edtrack/pipeline/tracking.hpp"
#include "edtrack/scenario.hpp"

namespace fs = std::filesystem;
using namespace edtrack;

namespace {

// Exit codes per error category; 1 is left for unexpected failures and CLI11
// reports its own parse errors.
int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::InvalidParameter: return 3;
    case ErrorCategory::Io: return 4;
    case ErrorCategory::Numeric: return 5;
    case ErrorCategory::Simulation: return 6;
    case ErrorCategory::Solver: return 7;
  }
  return 1;
}

EventLog stderr_log(bool verbose) {
  if (!verbose) return {};
  return [](const nlohmann::json& e) { std::cerr << e.dump() << '\n'; };
}

void print_summary(const TrackingMetrics& m) {
  const auto s = summary_json(m);
  std::printf("frames %zu, failed %zu, reprojection error %s px\n", m.frames.size(), m.failed_frames().size(),
              s["summary"].is_null() ? "n/a" : s["summary"].get<std::string>().c_str());
}

int cmd_track(const std::string& config, bool verbose) {
  const SequenceConfig cfg = load_sequence_config(config);
  TrackingOptions opt;
  opt.log = stderr_log(verbose);
  const auto m = run_tracking(cfg, opt);
  print_summary(m);
  std::printf("outputs in %s\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_simulate(const std::string& scenario, const std::string& out, bool verbose) {
  Scenario sc = load_scenario(scenario);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create '" + out + "': " + ec.message());
  int written = 0;
  run_scenario(sc, [&](int frame, const PBDState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "mesh_%04d.obj", frame);
    if (!s.mesh.empty()) {
      export_mesh(s, (fs::path(out) / name).string());
      ++written;
    }
    if (verbose) std::cerr << nlohmann::json{{"event", "frame"}, {"frame", frame}, {"time", s.time}}.dump() << '\n';
  });
  if (written == 0) std::fprintf(stderr, "warning: scenario has no mesh; nothing was written\n");
  std::printf("simulated %d frames into %s\n", sc.frames, out.c_str());
  return 0;
}

int cmd_synth_pairs(const std::string& mesh_a, const std::string& mesh_b, const std::string& cloud_a,
                    const std::string& cloud_b, const std::string& out, std::optional<double> tau,
                    const std::string& matches, bool verbose) {
  const DeformationMap map{read_obj(mesh_a), read_obj(mesh_b)};
  const auto a = read_ply(cloud_a).positions();
  const auto b = read_ply(cloud_b).positions();
  PairOptions opt;
  opt.tau = tau;
  const auto pairs = synthesize_pairs(a, b, map, opt);
  if (!export_pairs(pairs, cloud_a, cloud_b, out)) std::fprintf(stderr, "warning: no pairs survived the threshold\n");
  if (!matches.empty() && pairs.size() > 0) save_matches(matches, pairs_to_matches(pairs, a, b));
  if (verbose)
    std::cerr << nlohmann::json{{"event", "pairs"}, {"pairs", pairs.size()}, {"dropped", pairs.dropped},
                                {"skipped", pairs.skipped}}.dump()
              << '\n';
  std::printf("%zu pairs (%d dropped, %d skipped) -> %s\n", pairs.size(), pairs.dropped, pairs.skipped, out.c_str());
  return 0;
}

int cmd_eval(const std::string& tracked, const std::string& annotations, std::string out) {
  if (out.empty()) out = tracked;
  std::string mode;
  if (fs::exists(fs::path(tracked) / "metrics.json")) mode = load_metrics((fs::path(tracked) / "metrics.json").string()).mode;
  const auto m = evaluate_tracked(tracked, load_annotations(annotations), mode);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create '" + out + "': " + ec.message());
  save_metrics(m, fs::path(out) / "metrics.json");
  emit_report(m, out);
  print_summary(m);
  return 0;
}

int cmd_report(const std::string& metrics, std::string out) {
  if (out.empty()) out = fs::absolute(metrics).parent_path().string();
  const auto m = load_metrics(metrics);
  emit_report(m, out);
  print_summary(m);
  return 0;
}

int cmd_make_demo(const std::string& out, int frames) {
  SyntheticOptions opt;
  opt.frames = frames;
  write_synthetic_sequence(make_synthetic_sequence(opt), out);
  std::printf("wrote %d frames and configs (config_icp.json, config_correspondence.json) into %s\n", frames,
              out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surfel tracking with an embedded deformation graph"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("--verbose,-v", verbose, "Per-iteration JSON-lines log on stderr");

  std::string config;
  auto* track = app.add_subcommand("track", "Track a depth sequence described by a config JSON");
  track->add_option("config", config, "Sequence config")->required();

  std::string scenario, sim_out;
  auto* simulate = app.add_subcommand("simulate", "Run a PBD scenario and write one OBJ per frame");
  simulate->add_option("scenario", scenario, "Scenario JSON")->required();
  simulate->add_option("--out", sim_out, "Output directory")->required();

  std::string mesh_a, mesh_b, cloud_a, cloud_b, pairs_out, matches_out;
  std::optional<double> tau;
  auto* synth = app.add_subcommand("synth-pairs", "Pair two clouds through a mesh deformation");
  synth->add_option("--mesh-a", mesh_a, "Mesh state A (OBJ)")->required();
  synth->add_option("--mesh-b", mesh_b, "Mesh state B (OBJ)")->required();
  synth->add_option("--cloud-a", cloud_a, "Cloud A (PLY)")->required();
  synth->add_option("--cloud-b", cloud_b, "Cloud B (PLY)")->required();
  synth->add_option("--out", pairs_out, "Pair JSON")->required();
  synth->add_option("--tau", tau, "Pairing threshold in meters (default: twice the median spacing)");
  synth->add_option("--matches", matches_out, "Also write the pairs as a match file");

  std::string tracked, annotations, eval_out;
  auto* eval = app.add_subcommand("eval", "Recompute reprojection metrics from tracked clouds");
  eval->add_option("--tracked", tracked, "Directory with cloud_NNNN.ply and intrinsics.json")->required();
  eval->add_option("--annotations", annotations, "Annotation CSV")->required();
  eval->add_option("--out", eval_out, "Output directory (default: the tracked directory)");

  std::string metrics, report_out;
  auto* report = app.add_subcommand("report", "Write CSV, summary and plot from metrics.json");
  report->add_option("metrics", metrics, "metrics.json")->required();
  report->add_option("--out", report_out, "Output directory (default: next to metrics.json)");

  std::string demo_out;
  int demo_frames = 20;
  auto* demo = app.add_subcommand("make-demo", "Write a synthetic sheet sequence with configs for both modes");
  demo->add_option("--out", demo_out, "Output directory")->required();
  demo->add_option("--frames", demo_frames, "Frame count")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*track) return cmd_track(config, verbose);
    if (*simulate) return cmd_simulate(scenario, sim_out, verbose);
    if (*synth) return cmd_synth_pairs(mesh_a, mesh_b, cloud_a, cloud_b, pairs_out, tau, matches_out, verbose);
    if (*eval) return cmd_eval(tracked, annotations, eval_out);
    if (*report) return cmd_report(metrics, report_out);
    if (*demo) return cmd_make_demo(demo_out, demo_frames);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", to_string(e.category()), e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [internal]: %s\n", e.what());
    return 1;
  }
  return 1;
}
