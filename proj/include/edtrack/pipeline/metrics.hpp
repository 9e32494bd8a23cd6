#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "edtrack/association.hpp"

namespace edtrack {

/// Annotated landmark pixels, plus the surfel each landmark is bound to.
struct AnnotationSet {
  std::map<int, std::map<int, Vec2>> tracks;  // landmark -> frame -> (u, v)
  std::map<int, int> bound_surfel;            // landmark -> surfel index
  std::map<int, int> bound_frame;             // landmark -> frame of binding

  bool empty() const { return tracks.empty(); }

  std::optional<Vec2> at(int landmark, int frame) const {
    const auto t = tracks.find(landmark);
    if (t == tracks.end()) return std::nullopt;
    const auto f = t->second.find(frame);
    if (f == t->second.end()) return std::nullopt;
    return f->second;
  }

  int first_frame(int landmark) const { return tracks.at(landmark).begin()->first; }

  void validate(const CameraIntrinsics& intr) const {
    for (const auto& [id, frames] : tracks)
      for (const auto& [f, uv] : frames)
        if (!(uv.x() >= 0 && uv.y() >= 0 && uv.x() < intr.width && uv.y() < intr.height))
          throw ConfigError("landmark " + std::to_string(id) + " at frame " + std::to_string(f) +
                            " lies outside the image");
  }
};

/// CSV with header landmark_id,frame,u,v. Missing rows mean unannotated.
inline AnnotationSet load_annotations(std::istream& in, const std::string& name = "<stream>") {
  AnnotationSet a;
  std::string line;
  int line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (header) {
      header = false;
      if (line.find("landmark") != std::string::npos) continue;
    }
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    const std::string where = name + ":" + std::to_string(line_no);
    if (cells.size() != 4) throw IoError(where + ": expected 4 columns");
    try {
      const int id = std::stoi(cells[0]);
      const int frame = std::stoi(cells[1]);
      const double u = std::stod(cells[2]), v = std::stod(cells[3]);
      if (!std::isfinite(u) || !std::isfinite(v)) throw IoError(where + ": non-finite pixel");
      if (!a.tracks[id].emplace(frame, Vec2(u, v)).second)
        throw IoError(where + ": duplicate row for landmark " + std::to_string(id));
    } catch (const std::logic_error&) {
      throw IoError(where + ": cannot parse row '" + line + "'");
    }
  }
  return a;
}

inline AnnotationSet load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file '" + path + "'");
  return load_annotations(in, path);
}

inline void save_annotations(const std::string& path, const AnnotationSet& a) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "landmark_id,frame,u,v\n";
  char buf[128];
  for (const auto& [id, frames] : a.tracks)
    for (const auto& [f, uv] : frames) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%.6f\n", id, f, uv.x(), uv.y());
      out << buf;
    }
}

/// Binds every landmark whose first annotated frame is `frame` to the surfel
/// projecting nearest its annotation (ties: smaller index). Bound landmarks
/// are never rebound.
inline void bind_landmarks(AnnotationSet& a, std::span<const Vec3> positions, const CameraIntrinsics& intr, int frame) {
  for (const auto& [id, frames] : a.tracks) {
    if (a.bound_surfel.count(id) || frames.begin()->first != frame) continue;
    const Vec2 target = frames.begin()->second;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto uv = project(positions[i], intr);
      if (!uv) continue;
      const double d = (*uv - target).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = int(i);
      }
    }
    if (best >= 0) {
      a.bound_surfel[id] = best;
      a.bound_frame[id] = frame;
    }
  }
}

struct MeanStd {
  double mean = 0;
  double stddev = 0;  // population
  int count = 0;
};

inline MeanStd mean_std(std::span<const double> x) {
  MeanStd m;
  m.count = int(x.size());
  if (x.empty()) return m;
  for (double v : x) m.mean += v;
  m.mean /= double(x.size());
  for (double v : x) m.stddev += (v - m.mean) * (v - m.mean);
  m.stddev = std::sqrt(m.stddev / double(x.size()));
  return m;
}

/// "mean(std)" with one decimal each, e.g. "3.0(1.0)".
inline std::string format_mean_std(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f(%.1f)", mean, sd);
  return buf;
}

struct LandmarkError {
  int landmark = -1;
  int surfel = -1;  // -1 when unbound
  Vec2 annotated = Vec2::Zero();
  std::optional<Vec2> projected;  // empty when invalid this frame
  double error_px = std::numeric_limits<double>::quiet_NaN();

  bool valid() const { return projected.has_value(); }
};

struct FrameMetrics {
  int frame = 0;
  std::vector<LandmarkError> landmarks;  // only landmarks annotated this frame
  bool failed = false;                   // solver did not converge; previous warp kept

  std::vector<double> errors() const {
    std::vector<double> e;
    for (const auto& l : landmarks)
      if (l.valid()) e.push_back(l.error_px);
    return e;
  }
  MeanStd stats() const { return mean_std(errors()); }
  /// Valid landmarks over annotated landmarks; NaN without annotations.
  double validity_fraction() const {
    if (landmarks.empty()) return std::numeric_limits<double>::quiet_NaN();
    return double(errors().size()) / double(landmarks.size());
  }
};

/// Pixel errors for the landmarks annotated in `frame`. A landmark whose bound
/// surfel is missing or behind the camera is invalid for the frame.
inline FrameMetrics reprojection_error(std::span<const Vec3> positions, const AnnotationSet& a,
                                       const CameraIntrinsics& intr, int frame) {
  FrameMetrics m;
  m.frame = frame;
  for (const auto& [id, frames] : a.tracks) {
    const auto f = frames.find(frame);
    if (f == frames.end()) continue;
    LandmarkError e;
    e.landmark = id;
    e.annotated = f->second;
    if (const auto b = a.bound_surfel.find(id); b != a.bound_surfel.end()) {
      e.surfel = b->second;
      if (std::size_t(e.surfel) < positions.size()) e.projected = project(positions[e.surfel], intr);
    }
    if (e.projected) e.error_px = (*e.projected - e.annotated).norm();
    m.landmarks.push_back(e);
  }
  return m;
}

struct FrameSolve {
  int frame = 0;
  bool failed = false;
  std::string stop_reason;
  int iterations = 0;
  double initial_cost = 0;
  double final_cost = 0;
  double correspondence_fraction = 0;  // valid data-term entries at the end of the solve
  int surfels = 0;
  int nodes = 0;
  int merged = 0;
  int spawned = 0;
};

struct TrackingMetrics {
  std::string mode;
  std::vector<FrameMetrics> frames;
  std::vector<FrameSolve> solves;

  bool empty() const { return frames.empty(); }

  std::vector<int> failed_frames() const {
    std::vector<int> f;
    for (const auto& m : frames)
      if (m.failed) f.push_back(m.frame);
    return f;
  }

  /// Statistics over every valid landmark error of every frame.
  MeanStd pooled() const {
    std::vector<double> all;
    for (const auto& m : frames)
      for (double e : m.errors()) all.push_back(e);
    return mean_std(all);
  }

  /// Mean error of the last frame that has valid landmarks.
  std::optional<double> final_mean() const {
    for (auto it = frames.rbegin(); it != frames.rend(); ++it) {
      const auto s = it->stats();
      if (s.count > 0) return s.mean;
    }
    return std::nullopt;
  }
};

inline nlohmann::json to_json(const TrackingMetrics& m) {
  using nlohmann::json;
  json j;
  j["mode"] = m.mode;
  j["frames"] = json::array();
  for (const auto& f : m.frames) {
    json jf{{"frame", f.frame}, {"failed", f.failed}, {"landmarks", json::array()}};
    for (const auto& l : f.landmarks) {
      json jl{{"id", l.landmark}, {"surfel", l.surfel}, {"u", l.annotated.x()}, {"v", l.annotated.y()}};
      if (l.projected) {
        jl["u_proj"] = l.projected->x();
        jl["v_proj"] = l.projected->y();
      }
      jf["landmarks"].push_back(jl);
    }
    j["frames"].push_back(jf);
  }
  j["solves"] = json::array();
  for (const auto& s : m.solves)
    j["solves"].push_back({{"frame", s.frame},
                           {"failed", s.failed},
                           {"stop_reason", s.stop_reason},
                           {"iterations", s.iterations},
                           {"initial_cost", s.initial_cost},
                           {"final_cost", s.final_cost},
                           {"correspondence_fraction", s.correspondence_fraction},
                           {"surfels", s.surfels},
                           {"nodes", s.nodes},
                           {"merged", s.merged},
                           {"spawned", s.spawned}});
  return j;
}

inline TrackingMetrics metrics_from_json(const nlohmann::json& j) {
  TrackingMetrics m;
  try {
    m.mode = j.value("mode", std::string());
    for (const auto& jf : j.at("frames")) {
      FrameMetrics f;
      f.frame = jf.at("frame").get<int>();
      f.failed = jf.value("failed", false);
      for (const auto& jl : jf.at("landmarks")) {
        LandmarkError l;
        l.landmark = jl.at("id").get<int>();
        l.surfel = jl.value("surfel", -1);
        l.annotated = {jl.at("u").get<double>(), jl.at("v").get<double>()};
        if (jl.contains("u_proj")) {
          l.projected = Vec2(jl.at("u_proj").get<double>(), jl.at("v_proj").get<double>());
          l.error_px = (*l.projected - l.annotated).norm();
        }
        f.landmarks.push_back(l);
      }
      m.frames.push_back(f);
    }
    for (const auto& js : j.value("solves", nlohmann::json::array())) {
      FrameSolve s;
      s.frame = js.at("frame").get<int>();
      s.failed = js.value("failed", false);
      s.stop_reason = js.value("stop_reason", std::string());
      s.iterations = js.value("iterations", 0);
      s.initial_cost = js.value("initial_cost", 0.0);
      s.final_cost = js.value("final_cost", 0.0);
      s.correspondence_fraction = js.value("correspondence_fraction", 0.0);
      s.surfels = js.value("surfels", 0);
      s.nodes = js.value("nodes", 0);
      s.merged = js.value("merged", 0);
      s.spawned = js.value("spawned", 0);
      m.solves.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("metrics: ") + e.what());
  }
  return m;
}

inline TrackingMetrics load_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics '" + path + "'");
  try {
    return metrics_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("metrics '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace edtrack
