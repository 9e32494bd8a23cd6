#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "edtrack/kdtree.hpp"
#include "edtrack/types.hpp"

namespace edtrack {

enum class CostMode { Icp, Correspondence };

inline const char* to_string(CostMode m) { return m == CostMode::Icp ? "icp" : "correspondence"; }

inline CostMode cost_mode_from_string(const std::string& s) {
  if (s == "icp" || s == "ICP") return CostMode::Icp;
  if (s == "correspondence" || s == "Correspondence" || s == "corr") return CostMode::Correspondence;
  throw ConfigError("unknown cost mode '" + s + "'");
}

/// Per-surfel observation. In ICP mode the target carries a plane normal;
/// in correspondence mode only the target position is used.
struct Correspondence {
  bool valid = false;
  Vec3 target_position = Vec3::Zero();
  Vec3 target_normal = Vec3::Zero();
};

struct CorrespondenceSet {
  CostMode mode = CostMode::Icp;
  std::vector<Correspondence> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.valid ? 1 : 0;
    return n;
  }
  double valid_fraction() const { return entries.empty() ? 0.0 : double(valid_count()) / double(entries.size()); }
};

/// Continuous pixel coordinates; nullopt for points on or behind the image plane.
inline std::optional<Vec2> project(const Vec3& p, const CameraIntrinsics& intr) {
  if (!(p.z() > 0)) return std::nullopt;
  return Vec2(intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy);
}

/// Bilinear interpolation over the four pixels around uv; nullopt when uv
/// leaves [0, w-1] x [0, h-1] or any touched pixel fails `is_valid`.
template <typename T, typename Valid>
std::optional<T> bilinear_sample(const Image<T>& img, const Vec2& uv, Valid&& is_valid) {
  const double u = uv.x(), v = uv.y();
  if (!(u >= 0 && v >= 0 && u <= img.width - 1 && v <= img.height - 1)) return std::nullopt;
  const int u0 = std::min(int(std::floor(u)), std::max(img.width - 2, 0));
  const int v0 = std::min(int(std::floor(v)), std::max(img.height - 2, 0));
  const int u1 = std::min(u0 + 1, img.width - 1);
  const int v1 = std::min(v0 + 1, img.height - 1);
  const double a = u - u0, b = v - v0;
  // Pixels carrying zero weight are not "touched".
  const bool need_u1 = a > 0, need_v1 = b > 0;
  if (!is_valid(img(u0, v0))) return std::nullopt;
  if (need_u1 && !is_valid(img(u1, v0))) return std::nullopt;
  if (need_v1 && !is_valid(img(u0, v1))) return std::nullopt;
  if (need_u1 && need_v1 && !is_valid(img(u1, v1))) return std::nullopt;
  T out = (1 - a) * (1 - b) * img(u0, v0);
  if (need_u1) out = out + a * (1 - b) * img(u1, v0);
  if (need_v1) out = out + (1 - a) * b * img(u0, v1);
  if (need_u1 && need_v1) out = out + a * b * img(u1, v1);
  return out;
}

inline std::optional<double> bilinear_sample(const DepthMap& depth, const Vec2& uv) {
  return bilinear_sample(depth, uv, [](double d) { return d > 0; });
}

struct AssociationOptions {
  double occlusion_gate = 0.02;    // meters
  double normal_gate_deg = 60.0;
  int densify_k = 4;
  double match_radius = 0.05;      // meters
  double distance_clamp = 1e-6;    // meters
};

/// Projective data association of warped surfels against an observed frame.
inline CorrespondenceSet projective_associate(std::span<const Vec3> warped_positions,
                                              std::span<const Vec3> warped_normals, const DepthFrame& frame,
                                              const NormalMap& normal_map, const CameraIntrinsics& intr,
                                              const AssociationOptions& opt = {}) {
  CorrespondenceSet out;
  out.mode = CostMode::Icp;
  out.entries.resize(warped_positions.size());
  const double cos_gate = std::cos(opt.normal_gate_deg * std::numbers::pi / 180.0);
  auto masked = [&](const Vec2& uv) {
    const int u0 = int(std::floor(uv.x())), v0 = int(std::floor(uv.y()));
    for (int dv = 0; dv <= 1; ++dv)
      for (int du = 0; du <= 1; ++du) {
        const int u = std::min(u0 + du, frame.tissue_mask.width - 1);
        const int v = std::min(v0 + dv, frame.tissue_mask.height - 1);
        if (!frame.masked(u, v)) return false;
      }
    return true;
  };
  for (std::size_t i = 0; i < warped_positions.size(); ++i) {
    const Vec3& p = warped_positions[i];
    const auto uv = project(p, intr);
    if (!uv) continue;
    const auto d = bilinear_sample(frame.depth, *uv);
    if (!d) continue;
    if (!masked(*uv)) continue;
    if (std::abs(p.z() - *d) > opt.occlusion_gate) continue;
    const auto n = bilinear_sample(normal_map, *uv, [](const Vec3& v) { return !v.isZero(); });
    if (!n || n->norm() < 1e-12) continue;
    const Vec3 no = n->normalized();
    if (no.dot(warped_normals[i]) < cos_gate) continue;
    auto& e = out.entries[i];
    e.valid = true;
    e.target_position = back_project(uv->x(), uv->y(), *d, intr);
    e.target_normal = no;
  }
  return out;
}

/// Sparse (source, target) position pairs from an external matcher.
struct SparseMatchSet {
  std::vector<Vec3> sources;  // u_k, on the tracked cloud
  std::vector<Vec3> targets;  // v_k, on the new observation
  std::string provenance;

  std::size_t size() const { return sources.size(); }
};

/// Reads six whitespace-separated columns per row (u_x u_y u_z v_x v_y v_z);
/// '#' starts a comment.
inline SparseMatchSet load_matches(std::istream& in, const std::string& name = "<stream>") {
  SparseMatchSet m;
  m.provenance = name;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::vector<std::string> tok;
    for (std::string t; row >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 6)
      throw IoError(name + ":" + std::to_string(line_no) + ": expected 6 columns, found " + std::to_string(tok.size()));
    double v[6];
    for (int c = 0; c < 6; ++c) {
      char* end = nullptr;
      v[c] = std::strtod(tok[c].c_str(), &end);
      if (end == tok[c].c_str() || *end != '\0')
        throw IoError(name + ":" + std::to_string(line_no) + ": cannot parse '" + tok[c] + "'");
      if (!std::isfinite(v[c])) throw IoError(name + ":" + std::to_string(line_no) + ": non-finite value");
    }
    m.sources.emplace_back(v[0], v[1], v[2]);
    m.targets.emplace_back(v[3], v[4], v[5]);
  }
  if (m.sources.empty()) throw IoError(name + ": match file contains no matches");
  return m;
}

inline SparseMatchSet load_matches(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open match file " + path);
  return load_matches(in, path);
}

inline void save_matches(std::ostream& out, const SparseMatchSet& m) {
  char buf[256];
  for (std::size_t k = 0; k < m.size(); ++k) {
    const Vec3& u = m.sources[k];
    const Vec3& v = m.targets[k];
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g %.9g %.9g\n", u.x(), u.y(), u.z(), v.x(), v.y(), v.z());
    out << buf;
  }
}

inline void save_matches(const std::string& path, const SparseMatchSet& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write match file " + path);
  out << "# u_x u_y u_z v_x v_y v_z\n";
  save_matches(out, m);
  if (!out) throw IoError("failed writing " + path);
}

/// Inverse-distance weights over the given neighbor distances, clamped below.
inline std::vector<double> inverse_distance_weights(std::span<const double> distances, double clamp) {
  std::vector<double> w(distances.size());
  double sum = 0;
  for (std::size_t a = 0; a < distances.size(); ++a) {
    w[a] = 1.0 / std::max(distances[a], clamp);
    sum += w[a];
  }
  for (double& x : w) x /= sum;
  return w;
}

/// Dense per-point targets p_i + IDW-average of nearby match displacements.
/// Points whose nearest match source lies beyond match_radius stay invalid.
inline CorrespondenceSet densify_matches(const SparseMatchSet& matches, std::span<const Vec3> points,
                                         const AssociationOptions& opt = {}) {
  if (matches.size() == 0) throw ConfigError("densification needs at least one match");
  if (opt.densify_k < 1) throw ConfigError("densify_k must be at least 1");
  CorrespondenceSet out;
  out.mode = CostMode::Correspondence;
  out.entries.resize(points.size());
  const KdTree tree(matches.sources);
  std::vector<double> dist;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nn = tree.knn(points[i], opt.densify_k);
    if (nn.front().distance > opt.match_radius) continue;
    dist.clear();
    for (const auto& n : nn) dist.push_back(n.distance);
    const auto w = inverse_distance_weights(dist, opt.distance_clamp);
    Vec3 disp = Vec3::Zero();
    for (std::size_t a = 0; a < nn.size(); ++a)
      disp += w[a] * (matches.targets[nn[a].index] - matches.sources[nn[a].index]);
    out.entries[i].valid = true;
    out.entries[i].target_position = points[i] + disp;
  }
  return out;
}

}  // namespace edtrack
