#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "edtrack/association.hpp"
#include "edtrack/ed_graph.hpp"
#include "edtrack/solver.hpp"

namespace edtrack {

struct FrameFiles {
  std::string depth;
  std::string mask;
  std::string matches;  // empty for frame 0 or ICP mode
};

struct FusionOptions {
  bool enabled = true;
  bool spawn = true;        // add surfels for uncovered observed pixels
  bool grow_graph = true;   // add ED nodes for far-away new surfels
  double min_cover_px = 0.75;  // a surfel covers pixels within max(this, its projected radius)
};

struct SequenceConfig {
  std::string intrinsics;
  std::vector<FrameFiles> frames;
  CostMode mode = CostMode::Icp;
  CostWeights weights;
  SolverConfig solver;
  GraphOptions graph;
  AssociationOptions association;
  FusionOptions fusion;
  std::string annotations;  // optional
  std::string output_dir = "out";
  bool write_clouds = false;

  void validate(bool check_files = true) const {
    weights.validate();
    solver.validate();
    if (!(graph.node_spacing > 0)) throw ConfigError("graph.node_spacing must be positive");
    if (graph.k_neighbors < 1 || graph.k_edges < 1) throw ConfigError("graph k values must be at least 1");
    if (weights.mode != mode) throw ConfigError("weights mode differs from sequence mode");
    if (frames.empty()) throw ConfigError("sequence has no frames");
    if (!check_files) return;
    auto need = [](const std::string& path, const std::string& what) {
      if (path.empty() || !std::filesystem::is_regular_file(path))
        throw ConfigError(what + " '" + path + "' does not exist");
    };
    need(intrinsics, "intrinsics file");
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const std::string tag = "frame " + std::to_string(k);
      need(frames[k].depth, tag + " depth");
      need(frames[k].mask, tag + " mask");
      if (mode == CostMode::Correspondence && k > 0) need(frames[k].matches, tag + " match file");
    }
    if (!annotations.empty()) need(annotations, "annotation file");
  }
};

namespace detail {

inline std::string expand_pattern(const std::string& pattern, int frame) {
  char buf[1024];
  const int n = std::snprintf(buf, sizeof buf, pattern.c_str(), frame);
  if (n < 0 || n >= int(sizeof buf)) throw ConfigError("cannot expand path pattern '" + pattern + "'");
  return buf;
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace detail

/// Parses a sequence config. Relative paths resolve against `base_dir`.
/// Frames come either as an explicit "frames" list or as printf-style
/// "depth_pattern"/"mask_pattern"/"matches_pattern" with "frame_count".
inline SequenceConfig sequence_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using nlohmann::json;
  SequenceConfig c;
  try {
    c.intrinsics = detail::resolve(base_dir, j.at("intrinsics").get<std::string>());
    c.mode = cost_mode_from_string(j.value("mode", std::string("icp")));

    if (j.contains("frames")) {
      for (const auto& f : j.at("frames"))
        c.frames.push_back({detail::resolve(base_dir, f.at("depth").get<std::string>()),
                            detail::resolve(base_dir, f.at("mask").get<std::string>()),
                            detail::resolve(base_dir, f.value("matches", std::string()))});
    } else {
      const int n = j.at("frame_count").get<int>();
      const int first = j.value("first_frame", 0);
      const std::string dp = j.at("depth_pattern"), mp = j.at("mask_pattern");
      const std::string xp = j.value("matches_pattern", std::string());
      for (int k = 0; k < n; ++k) {
        FrameFiles f{detail::resolve(base_dir, detail::expand_pattern(dp, first + k)),
                     detail::resolve(base_dir, detail::expand_pattern(mp, first + k)), ""};
        if (!xp.empty() && k > 0) f.matches = detail::resolve(base_dir, detail::expand_pattern(xp, first + k));
        c.frames.push_back(f);
      }
    }

    const json w = j.value("weights", json::object());
    c.weights.lambda_icp = w.value("lambda_icp", c.weights.lambda_icp);
    c.weights.lambda_r = w.value("lambda_r", c.weights.lambda_r);
    c.weights.lambda_c = w.value("lambda_c", c.weights.lambda_c);
    c.weights.mode = c.mode;

    const json s = j.value("solver", json::object());
    c.solver.step_size = s.value("step_size", c.solver.step_size);
    c.solver.max_iterations = s.value("max_iterations", c.solver.max_iterations);
    c.solver.relative_tolerance = s.value("relative_tolerance", c.solver.relative_tolerance);
    c.solver.reassociate_every = s.value("reassociate_every", c.solver.reassociate_every);
    c.solver.max_halvings = s.value("max_halvings", c.solver.max_halvings);
    if (s.contains("gradient_mode")) c.solver.gradient_mode = gradient_mode_from_string(s["gradient_mode"]);

    const json g = j.value("graph", json::object());
    c.graph.node_spacing = g.value("node_spacing", c.graph.node_spacing);
    c.graph.k_neighbors = g.value("k_neighbors", c.graph.k_neighbors);
    c.graph.k_edges = g.value("k_edges", c.graph.k_edges);

    const json a = j.value("association", json::object());
    c.association.occlusion_gate = a.value("occlusion_gate", c.association.occlusion_gate);
    c.association.normal_gate_deg = a.value("normal_gate_deg", c.association.normal_gate_deg);
    c.association.densify_k = a.value("densify_k", c.association.densify_k);
    c.association.match_radius = a.value("match_radius", 5.0 * c.graph.node_spacing);
    c.association.distance_clamp = a.value("distance_clamp", c.association.distance_clamp);

    const json f = j.value("fusion", json::object());
    c.fusion.enabled = f.value("enabled", c.fusion.enabled);
    c.fusion.spawn = f.value("spawn", c.fusion.spawn);
    c.fusion.grow_graph = f.value("grow_graph", c.fusion.grow_graph);
    c.fusion.min_cover_px = f.value("min_cover_px", c.fusion.min_cover_px);

    c.annotations = detail::resolve(base_dir, j.value("annotations", std::string()));
    c.output_dir = detail::resolve(base_dir, j.value("output_dir", std::string("out")));
    c.write_clouds = j.value("write_clouds", false);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sequence config: ") + e.what());
  }
  return c;
}

inline SequenceConfig load_sequence_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  const auto base = std::filesystem::absolute(path).parent_path();
  return sequence_config_from_json(j, base);
}

}  // namespace edtrack
