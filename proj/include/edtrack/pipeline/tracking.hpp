#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "edtrack/depth.hpp"
#include "edtrack/io/intrinsics.hpp"
#include "edtrack/io/ply.hpp"
#include "edtrack/io/png.hpp"
#include "edtrack/pipeline/config.hpp"
#include "edtrack/pipeline/fusion.hpp"
#include "edtrack/pipeline/metrics.hpp"
#include "edtrack/pipeline/report.hpp"

namespace edtrack {

using EventLog = std::function<void(const nlohmann::json&)>;

struct FrameInput {
  DepthFrame frame;
  NormalMap normals;
  std::optional<SparseMatchSet> matches;
};

/// Loads depth, mask and (in correspondence mode) matches of frame k. Errors
/// keep their category and name the frame.
inline FrameInput load_frame_input(const SequenceConfig& cfg, std::size_t k, const CameraIntrinsics& intr) {
  FrameInput in;
  try {
    const FrameFiles& f = cfg.frames.at(k);
    in.frame.frame_id = int(k);
    in.frame.depth = load_depth_png(f.depth, intr.depth_scale);
    in.frame.tissue_mask = load_mask_png(f.mask);
    in.frame.validate(intr);
    in.normals = normals_from_depth(in.frame, intr);
    if (cfg.mode == CostMode::Correspondence && k > 0) in.matches = load_matches(f.matches);
  } catch (const Error& e) {
    throw Error(e.category(), "frame " + std::to_string(k) + ": " + e.what());
  }
  return in;
}

/// Holds the surfel model and ED graph in the coordinates of the latest
/// frame. Each call to track() solves the motion from the previous frame,
/// applies it, and fuses the new observation.
class Tracker {
 public:
  Tracker(SequenceConfig cfg, CameraIntrinsics intr) : cfg_(std::move(cfg)), intr_(intr) {}

  void initialize(const DepthFrame& frame, const NormalMap& normals) {
    cloud_ = surfels_from_depth(frame, normals, intr_);
    if (cloud_.empty()) throw ConfigError("frame " + std::to_string(frame.frame_id) + " yields no surfels");
    graph_ = build_ed_graph(cloud_, cfg_.graph);
  }

  FrameSolve track(const FrameInput& in, const IterationCallback& on_iteration = {}) {
    if (cloud_.empty()) throw ConfigError("tracker used before initialization");
    FrameSolve out;
    out.frame = in.frame.frame_id;

    const auto positions = cloud_.positions();
    const auto normals = cloud_.normals();
    const SolveState state = SolveState::make(graph_, positions, normals);

    DataProvider provider;
    if (cfg_.mode == CostMode::Icp) {
      provider.mode = CostMode::Icp;
      provider.associate = [&](const SolveState& s) {
        return projective_associate(s.warped_positions(), s.warped_normals(), in.frame, in.normals, intr_,
                                    cfg_.association);
      };
    } else {
      if (!in.matches) throw ConfigError("frame " + std::to_string(out.frame) + " has no match set");
      provider = DataProvider::fixed(densify_matches(*in.matches, positions, cfg_.association));
    }

    OptimizationReport report;
    try {
      report = optimize(state, provider, cfg_.weights, cfg_.solver, on_iteration);
    } catch (const SolverError& e) {
      return failed(out, e.what(), e.report());
    } catch (const NumericError& e) {
      return failed(out, e.what(), {});
    }
    fill_costs(out, report);

    // Apply the warp to surfels and to node positions.
    SolveState solved = state;
    solved.params = report.final_params;
    std::vector<Vec3> new_pos, new_nrm;
    try {
      new_pos = solved.warped_positions();
      new_nrm = solved.warped_normals();
    } catch (const NumericError& e) {
      return failed(out, e.what(), report);
    }
    SurfelCloud warped = cloud_;
    for (std::size_t i = 0; i < warped.size(); ++i) {
      warped.surfels[i].position = new_pos[i];
      warped.surfels[i].normal = new_nrm[i];
    }
    EDGraph moved = graph_;
    for (auto& g : moved.nodes) g = skin_point(g, graph_, report.final_params);

    FusionResult fused = fuse_frame(warped, in.frame, in.normals, intr_, cfg_.association, cfg_.fusion);
    cloud_ = std::move(fused.cloud);
    graph_ = std::move(moved);
    if (cfg_.fusion.grow_graph && !fused.new_positions.empty()) grow_ed_graph(graph_, fused.new_positions, cfg_.graph);
    out.merged = fused.merged;
    out.spawned = fused.spawned;
    out.surfels = int(cloud_.size());
    out.nodes = int(graph_.size());
    return out;
  }

  const SurfelCloud& cloud() const { return cloud_; }
  const EDGraph& graph() const { return graph_; }
  const CameraIntrinsics& intrinsics() const { return intr_; }

 private:
  static void fill_costs(FrameSolve& out, const OptimizationReport& r) {
    out.stop_reason = r.stop_reason;
    out.iterations = r.iterations_used;
    if (!r.iterations.empty()) {
      out.initial_cost = r.iterations.front().costs.total;
      out.final_cost = r.iterations.back().costs.total;
      out.correspondence_fraction = r.iterations.back().costs.valid_fraction;
    }
  }

  FrameSolve failed(FrameSolve out, const std::string& why, const OptimizationReport& r) {
    fill_costs(out, r);
    out.failed = true;
    out.stop_reason = why;
    cloud_.frame_id = out.frame;
    out.surfels = int(cloud_.size());
    out.nodes = int(graph_.size());
    return out;
  }

  SequenceConfig cfg_;
  CameraIntrinsics intr_;
  SurfelCloud cloud_;
  EDGraph graph_;
};

struct TrackingOptions {
  EventLog log;                  // per-iteration and per-frame JSON events
  bool write_outputs = true;     // metrics, reports and clouds under cfg.output_dir
};

inline std::string cloud_file_name(int frame) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cloud_%04d.ply", frame);
  return buf;
}

/// Tracks the whole sequence. Metric files are written when
/// opt.write_outputs is set.
inline TrackingMetrics run_tracking(const SequenceConfig& cfg, const TrackingOptions& opt = {}) {
  cfg.validate();
  const CameraIntrinsics intr = load_intrinsics(cfg.intrinsics);
  AnnotationSet annotations;
  if (!cfg.annotations.empty()) {
    annotations = load_annotations(cfg.annotations);
    annotations.validate(intr);
  }

  const std::filesystem::path out_dir(cfg.output_dir);
  if (opt.write_outputs) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
    save_intrinsics((out_dir / "intrinsics.json").string(), intr);
  }

  TrackingMetrics metrics;
  metrics.mode = to_string(cfg.mode);
  Tracker tracker(cfg, intr);

  auto record_frame = [&](int k, FrameSolve solve) {
    const auto pos = tracker.cloud().positions();
    bind_landmarks(annotations, pos, intr, k);
    FrameMetrics fm = reprojection_error(pos, annotations, intr, k);
    fm.failed = solve.failed;
    if (opt.log) {
      nlohmann::json e{{"event", "frame"},       {"frame", k},          {"failed", solve.failed},
                       {"stop", solve.stop_reason}, {"iterations", solve.iterations},
                       {"final_cost", solve.final_cost}, {"surfels", solve.surfels}, {"nodes", solve.nodes},
                       {"merged", solve.merged},  {"spawned", solve.spawned}};
      if (const auto s = fm.stats(); s.count) e["mean_px"] = s.mean;
      opt.log(e);
    }
    if (opt.write_outputs && cfg.write_clouds) write_ply((out_dir / cloud_file_name(k)).string(), tracker.cloud());
    metrics.frames.push_back(std::move(fm));
    metrics.solves.push_back(solve);
  };

  for (std::size_t k = 0; k < cfg.frames.size(); ++k) {
    const FrameInput in = load_frame_input(cfg, k, intr);
    if (k == 0) {
      tracker.initialize(in.frame, in.normals);
      FrameSolve s;
      s.stop_reason = "initialized";
      s.surfels = int(tracker.cloud().size());
      s.nodes = int(tracker.graph().size());
      record_frame(0, s);
      continue;
    }
    IterationCallback cb;
    if (opt.log)
      cb = [&, k](const IterationRecord& r) {
        opt.log({{"event", "iteration"}, {"frame", k}, {"iteration", r.iteration}, {"total", r.costs.total},
                 {"data", r.costs.data}, {"arap", r.costs.arap}, {"quat", r.costs.quat},
                 {"valid_fraction", r.costs.valid_fraction}, {"step", r.step}, {"halvings", r.halvings},
                 {"reassociated", r.reassociated}});
      };
    record_frame(int(k), tracker.track(in, cb));
  }

  if (opt.write_outputs) {
    save_metrics(metrics, out_dir / "metrics.json");
    emit_report(metrics, out_dir);
  }
  return metrics;
}

/// Recomputes metrics from the per-frame clouds written by a tracking run.
inline TrackingMetrics evaluate_tracked(const std::filesystem::path& dir, AnnotationSet annotations,
                                        const std::string& mode = "") {
  const CameraIntrinsics intr = load_intrinsics((dir / "intrinsics.json").string());
  annotations.validate(intr);
  TrackingMetrics m;
  m.mode = mode;
  for (int k = 0;; ++k) {
    const auto path = dir / cloud_file_name(k);
    if (!std::filesystem::exists(path)) break;
    const auto pos = read_ply(path.string()).positions();
    bind_landmarks(annotations, pos, intr, k);
    m.frames.push_back(reprojection_error(pos, annotations, intr, k));
  }
  if (m.frames.empty()) throw IoError("no tracked clouds (" + cloud_file_name(0) + ", ...) in '" + dir.string() + "'");
  return m;
}

}  // namespace edtrack
