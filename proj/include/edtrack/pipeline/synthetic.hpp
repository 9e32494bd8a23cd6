#pragma once

// Rendered sequences of a simulated sheet, with ground-truth match files and
// vertex landmarks. Used by the make-demo command and by the tests.

#include <cstdio>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "edtrack/io/intrinsics.hpp"
#include "edtrack/io/png.hpp"
#include "edtrack/pair_synthesis.hpp"
#include "edtrack/pipeline/metrics.hpp"
#include "edtrack/scenario.hpp"

namespace edtrack {

struct SyntheticOptions {
  int frames = 20;
  int nx = 11, ny = 9;           // sheet vertices
  Vec2 size{0.10, 0.08};         // meters
  double distance = 0.2;         // sheet depth at frame 0
  Vec3 start{-0.075, -0.04, 0};  // lower-left corner offset in x, y
  Vec3 pull{0.05, 0, 0};         // displacement of the left edge over the sequence
  Vec3 shear{0, 0.01, 0};        // extra displacement of the right edge
  int substeps = 3;
  int pbd_iterations = 10;
  int landmark_stride = 2;       // every n-th interior vertex becomes a landmark
  CameraIntrinsics camera = default_camera();

  static CameraIntrinsics default_camera() {
    CameraIntrinsics c;
    c.fx = c.fy = 110;
    c.width = 96;
    c.height = 72;
    c.cx = 47.5;
    c.cy = 35.5;
    c.depth_scale = 1e-4;
    return c;
  }
};

struct SyntheticSequence {
  CameraIntrinsics intr;
  std::vector<ObjMesh> meshes;    // per frame, same topology
  std::vector<DepthFrame> frames;
  AnnotationSet annotations;
};

/// Nearest ray hit per pixel (Moller-Trumbore against every triangle);
/// unhit pixels get depth 0 and mask 0.
inline DepthFrame render_mesh(const ObjMesh& mesh, const CameraIntrinsics& intr, int frame_id) {
  // Rays through a shared edge must hit one of its triangles.
  constexpr double kEdgeSlack = 1e-9;
  DepthFrame f;
  f.frame_id = frame_id;
  f.depth = DepthMap(intr.width, intr.height, 0.0);
  f.tissue_mask = MaskMap(intr.width, intr.height, 0);
  for (const auto& t : mesh.triangles) {
    const Vec3 &a = mesh.positions[t[0]], &b = mesh.positions[t[1]], &c = mesh.positions[t[2]];
    // Pixel bounding box of the projected triangle.
    double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
    bool visible = true;
    for (const Vec3* p : {&a, &b, &c}) {
      if (!(p->z() > 0)) visible = false;
      const double u = intr.fx * p->x() / p->z() + intr.cx, v = intr.fy * p->y() / p->z() + intr.cy;
      umin = std::min(umin, u), umax = std::max(umax, u), vmin = std::min(vmin, v), vmax = std::max(vmax, v);
    }
    if (!visible) continue;
    const Vec3 e1 = b - a, e2 = c - a;
    for (int v = std::max(0, int(std::floor(vmin))); v <= std::min(intr.height - 1, int(std::ceil(vmax))); ++v)
      for (int u = std::max(0, int(std::floor(umin))); u <= std::min(intr.width - 1, int(std::ceil(umax))); ++u) {
        const Vec3 dir((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
        const Vec3 pv = dir.cross(e2);
        const double det = e1.dot(pv);
        if (std::abs(det) < 1e-15) continue;
        const Vec3 tv = -a;
        const double s = tv.dot(pv) / det;
        if (s < -kEdgeSlack || s > 1 + kEdgeSlack) continue;
        const Vec3 qv = tv.cross(e1);
        const double r = dir.dot(qv) / det;
        if (r < -kEdgeSlack || s + r > 1 + kEdgeSlack) continue;
        const double z = e2.dot(qv) / det;  // dir.z() == 1, so the ray parameter is the depth
        if (z <= 0) continue;
        double& d = f.depth(u, v);
        if (d == 0 || z < d) {
          d = z;
          f.tissue_mask(u, v) = 1;
        }
      }
  }
  return f;
}

/// Back-projected masked pixels with valid depth, every `stride`-th in u and v.
inline std::vector<Vec3> observed_cloud(const DepthFrame& f, const CameraIntrinsics& intr, int stride = 1) {
  std::vector<Vec3> out;
  for (int v = 0; v < f.depth.height; v += stride)
    for (int u = 0; u < f.depth.width; u += stride)
      if (f.valid(u, v) && f.masked(u, v)) out.push_back(back_project(u, v, f.depth(u, v), intr));
  return out;
}

/// Simulates the sheet, renders every frame and projects vertex landmarks.
/// Left and right vertex columns are driven by handles; the interior follows
/// through the distance and shape-matching constraints.
inline SyntheticSequence make_synthetic_sequence(const SyntheticOptions& opt = {}) {
  if (opt.frames < 1) throw ConfigError("synthetic sequence needs at least one frame");
  opt.camera.validate();
  SyntheticSequence seq;
  seq.intr = opt.camera;

  PBDState s = make_sheet(opt.nx, opt.ny, opt.size, Vec3(opt.start.x(), opt.start.y(), opt.distance));
  s.constraints = auto_constraints(s, {});
  const double frame_dt = 1.0 / 30.0;
  const double duration = std::max(1, opt.frames - 1) * frame_dt;
  for (int j = 0; j < opt.ny; ++j) {
    const int left = j * opt.nx, right = j * opt.nx + opt.nx - 1;
    const Vec3 l0 = s.particles[left].x, r0 = s.particles[right].x;
    s.handles.push_back({left, {{0.0, l0}, {duration, l0 + opt.pull}}});
    s.handles.push_back({right, {{0.0, r0}, {duration, r0 + opt.pull + opt.shear}}});
  }

  std::vector<int> landmark_vertices;
  int count = 0;
  for (int j = 1; j + 1 < opt.ny; ++j)
    for (int i = 1; i + 1 < opt.nx; ++i)
      if (count++ % std::max(1, opt.landmark_stride) == 0) landmark_vertices.push_back(j * opt.nx + i);

  for (int k = 0; k < opt.frames; ++k) {
    if (k > 0)
      for (int sub = 0; sub < opt.substeps; ++sub) step(s, frame_dt / opt.substeps, opt.pbd_iterations);
    seq.meshes.push_back(mesh_snapshot(s));
    seq.frames.push_back(render_mesh(seq.meshes.back(), seq.intr, k));
    for (std::size_t l = 0; l < landmark_vertices.size(); ++l) {
      const auto uv = project(seq.meshes.back().positions[landmark_vertices[l]], seq.intr);
      if (uv && uv->x() >= 0 && uv->y() >= 0 && uv->x() < seq.intr.width && uv->y() < seq.intr.height)
        seq.annotations.tracks[int(l)][k] = *uv;
    }
  }
  return seq;
}

/// Ground-truth matches from frame k-1 to frame k: observed points of frame
/// k-1 are projected onto mesh k-1 and carried to mesh k by barycentric
/// transfer. Points farther than `cap` from the mesh are left out.
inline SparseMatchSet synthetic_matches(const SyntheticSequence& seq, int k, int stride, double cap = 1e-3) {
  const auto a = observed_cloud(seq.frames[k - 1], seq.intr, stride);
  const DeformationMap map{seq.meshes[k - 1], seq.meshes[k]};
  SparseMatchSet m;
  m.provenance = "transported";
  const auto feet = project_to_mesh(a, map.mesh_a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((feet[i].world_position - a[i]).norm() > cap) continue;
    m.sources.push_back(a[i]);
    m.targets.push_back(transport(feet[i], map, TransportDirection::AtoB));
  }
  if (m.size() == 0) throw InvalidParameterError("no matches for frame " + std::to_string(k));
  return m;
}

/// Solver settings shared by both generated configs.
inline nlohmann::json synthetic_solver_json() {
  return {{"step_size", 5e-3}, {"max_iterations", 300}, {"relative_tolerance", 1e-6}, {"reassociate_every", 10}};
}

/// Writes frames, match files, meshes, landmarks and one config per cost mode
/// (config_icp.json, config_correspondence.json) into dir.
inline void write_synthetic_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir,
                                     int cloud_stride = 2, const nlohmann::json& solver = synthetic_solver_json()) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  auto name = [](const char* pattern, int k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, k);
    return std::string(buf);
  };
  save_intrinsics((dir / "intrinsics.json").string(), seq.intr);
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    save_depth_png((dir / name("depth_%04d.png", int(k))).string(), seq.frames[k].depth, seq.intr.depth_scale);
    save_mask_png((dir / name("mask_%04d.png", int(k))).string(), seq.frames[k].tissue_mask);
    write_obj((dir / name("mesh_%04d.obj", int(k))).string(), seq.meshes[k]);
    if (k > 0) save_matches((dir / name("matches_%04d.txt", int(k))).string(), synthetic_matches(seq, int(k), cloud_stride));
  }
  save_annotations((dir / "annotations.csv").string(), seq.annotations);

  for (const char* mode : {"icp", "correspondence"}) {
    nlohmann::json c{{"intrinsics", "intrinsics.json"},
                     {"frame_count", seq.frames.size()},
                     {"depth_pattern", "depth_%04d.png"},
                     {"mask_pattern", "mask_%04d.png"},
                     {"mode", mode},
                     {"solver", solver},
                     {"graph", {{"node_spacing", 0.01}, {"k_neighbors", 4}, {"k_edges", 8}}},
                     {"annotations", "annotations.csv"},
                     {"output_dir", std::string("out_") + mode},
                     {"write_clouds", true}};
    if (std::string(mode) == "correspondence") c["matches_pattern"] = "matches_%04d.txt";
    std::ofstream out(dir / (std::string("config_") + mode + ".json"));
    if (!out) throw IoError("cannot write config into '" + dir.string() + "'");
    out << c.dump(1) << '\n';
  }
}

}  // namespace edtrack
