#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edtrack/association.hpp"
#include "edtrack/io/obj.hpp"
#include "edtrack/kdtree.hpp"

namespace edtrack {

struct SurfacePoint {
  int triangle_id = -1;
  Vec3 barycentric = Vec3::Zero();
  Vec3 world_position = Vec3::Zero();
};

struct ClosestPoint {
  Vec3 point;
  Vec3 barycentric;
};

/// Closest point on triangle abc to p, by Voronoi-region classification.
inline ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return {a, {1, 0, 0}};

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return {b, {0, 1, 0}};

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {a + v * ab, {1 - v, v, 0}};
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return {c, {0, 0, 1}};

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {a + w * ac, {1 - w, 0, w}};
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {b + w * (c - b), {0, 1 - w, w}};
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return {a + ab * v + ac * w, {1 - v - w, v, w}};
}

inline Vec3 barycentric_point(const ObjMesh& mesh, int tri, const Vec3& bary) {
  const auto& t = mesh.triangles[tri];
  return bary(0) * mesh.positions[t[0]] + bary(1) * mesh.positions[t[1]] + bary(2) * mesh.positions[t[2]];
}

/// Globally nearest surface point, by exhaustive search over triangles
/// (ties go to the lower triangle id).
inline SurfacePoint nearest_surface_point(const Vec3& p, const ObjMesh& mesh) {
  SurfacePoint best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < mesh.triangles.size(); ++k) {
    const auto& t = mesh.triangles[k];
    const auto cp = closest_point_on_triangle(p, mesh.positions[t[0]], mesh.positions[t[1]], mesh.positions[t[2]]);
    const double d = (cp.point - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = {int(k), cp.barycentric, cp.point};
    }
  }
  return best;
}

inline std::vector<SurfacePoint> project_to_mesh(std::span<const Vec3> cloud, const ObjMesh& mesh) {
  if (mesh.triangles.empty()) throw InvalidParameterError("cannot project onto an empty mesh");
  std::vector<SurfacePoint> out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.push_back(nearest_surface_point(p, mesh));
  return out;
}

enum class TransportDirection { AtoB, BtoA };

/// Two states of one surface with identical topology.
struct DeformationMap {
  ObjMesh mesh_a;
  ObjMesh mesh_b;

  void validate() const {
    if (mesh_a.triangles.empty()) throw InvalidParameterError("deformation map has an empty mesh");
    if (mesh_a.triangles != mesh_b.triangles) throw InvalidParameterError("meshes A and B differ in triangle lists");
    if (mesh_a.positions.size() != mesh_b.positions.size())
      throw InvalidParameterError("meshes A and B differ in vertex count");
    for (const ObjMesh* m : {&mesh_a, &mesh_b})
      for (const auto& t : m->triangles) {
        for (int k : t)
          if (k < 0 || std::size_t(k) >= m->positions.size())
            throw InvalidParameterError("triangle references a missing vertex");
        const Vec3& a = m->positions[t[0]];
        if (!((m->positions[t[1]] - a).cross(m->positions[t[2]] - a).norm() > 1e-14))
          throw InvalidParameterError("deformation map has a degenerate triangle");
      }
  }

  const ObjMesh& source(TransportDirection d) const { return d == TransportDirection::AtoB ? mesh_a : mesh_b; }
  const ObjMesh& destination(TransportDirection d) const { return d == TransportDirection::AtoB ? mesh_b : mesh_a; }
};

/// Same triangle and barycentrics, evaluated on the other mesh state.
inline Vec3 transport(const SurfacePoint& sp, const DeformationMap& map, TransportDirection dir) {
  return barycentric_point(map.destination(dir), sp.triangle_id, sp.barycentric);
}

struct PairedIndexSet {
  std::vector<std::pair<int, int>> pairs;  // (index in A, index in B), sorted
  std::vector<double> residuals;
  int dropped = 0;   // transported points with no partner within tau
  int skipped = 0;   // points too far from the mesh to be projected

  std::size_t size() const { return pairs.size(); }
};

/// Twice the median nearest-neighbor spacing of the cloud.
inline double default_pair_threshold(std::span<const Vec3> cloud) {
  if (cloud.size() < 2) throw InvalidParameterError("need at least two points to estimate spacing");
  const KdTree tree(cloud);
  std::vector<double> d;
  d.reserve(cloud.size());
  for (const auto& p : cloud) d.push_back(tree.knn(p, 2)[1].distance);
  std::nth_element(d.begin(), d.begin() + std::ptrdiff_t(d.size() / 2), d.end());
  return 2.0 * d[d.size() / 2];
}

struct PairOptions {
  std::optional<double> tau;  // default: per-direction default_pair_threshold of the target cloud
  double projection_cap = 5.0;  // in units of tau
};

/// Projects each cloud onto its own mesh state, carries it to the other state
/// and pairs it with the nearest point there. The two directions are merged;
/// a pair found twice keeps its smaller residual.
inline PairedIndexSet synthesize_pairs(std::span<const Vec3> cloud_a, std::span<const Vec3> cloud_b,
                                       const DeformationMap& map, const PairOptions& opt = {}) {
  if (cloud_a.empty() || cloud_b.empty()) throw InvalidParameterError("pair synthesis needs non-empty clouds");
  map.validate();
  if (opt.tau && !(*opt.tau > 0)) throw InvalidParameterError("pairing threshold must be positive");

  PairedIndexSet out;
  std::map<std::pair<int, int>, double> merged;
  auto run = [&](std::span<const Vec3> from, std::span<const Vec3> to, TransportDirection dir) {
    const double tau = opt.tau ? *opt.tau : default_pair_threshold(to);
    const double cap = opt.projection_cap * tau;
    const KdTree tree(to);
    const ObjMesh& src = map.source(dir);
    for (std::size_t i = 0; i < from.size(); ++i) {
      const SurfacePoint sp = nearest_surface_point(from[i], src);
      if ((sp.world_position - from[i]).norm() > cap) {
        ++out.skipped;
        continue;
      }
      const Vec3 moved = transport(sp, map, dir);
      const Neighbor nn = tree.nearest(moved);
      if (nn.distance > tau) {
        ++out.dropped;
        continue;
      }
      const auto key = dir == TransportDirection::AtoB ? std::pair{int(i), nn.index} : std::pair{nn.index, int(i)};
      auto [it, fresh] = merged.try_emplace(key, nn.distance);
      if (!fresh) it->second = std::min(it->second, nn.distance);
    }
  };
  run(cloud_a, cloud_b, TransportDirection::AtoB);
  run(cloud_b, cloud_a, TransportDirection::BtoA);
  for (const auto& [k, r] : merged) {
    out.pairs.push_back(k);
    out.residuals.push_back(r);
  }
  return out;
}

/// Match rows (cloud_a[i], cloud_b[j]) for use as tracker input.
inline SparseMatchSet pairs_to_matches(const PairedIndexSet& pairs, std::span<const Vec3> cloud_a,
                                       std::span<const Vec3> cloud_b) {
  SparseMatchSet m;
  m.provenance = "synthesized";
  for (auto [i, j] : pairs.pairs) {
    m.sources.push_back(cloud_a[i]);
    m.targets.push_back(cloud_b[j]);
  }
  return m;
}

/// Writes the pair JSON and returns false (a warning) when there are no pairs.
inline bool export_pairs(const PairedIndexSet& pairs, const std::string& cloud_a, const std::string& cloud_b,
                         const std::string& path) {
  nlohmann::json j;
  j["cloud_a"] = cloud_a;
  j["cloud_b"] = cloud_b;
  j["pairs"] = nlohmann::json::array();
  for (auto [a, b] : pairs.pairs) j["pairs"].push_back({a, b});
  j["residuals"] = pairs.residuals;
  j["dropped"] = pairs.dropped;
  j["skipped"] = pairs.skipped;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
  return !pairs.pairs.empty();
}

inline PairedIndexSet load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair file '" + path + "'");
  PairedIndexSet p;
  try {
    nlohmann::json j;
    in >> j;
    for (const auto& e : j.at("pairs")) p.pairs.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    p.residuals = j.at("residuals").get<std::vector<double>>();
    p.dropped = j.value("dropped", 0);
    p.skipped = j.value("skipped", 0);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("pair file '" + path + "': " + e.what());
  }
  if (p.residuals.size() != p.pairs.size()) throw IoError("pair file '" + path + "': residual count mismatch");
  return p;
}

}  // namespace edtrack
