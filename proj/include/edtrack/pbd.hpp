#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <variant>
#include <vector>

#include "edtrack/types.hpp"

namespace edtrack {

using Triangle = std::array<int, 3>;

struct Particle {
  Vec3 x = Vec3::Zero();  // current position
  Vec3 p = Vec3::Zero();  // predicted position
  Vec3 v = Vec3::Zero();
  double inv_mass = 1.0;  // 0 = pinned
};

/// Surface over a subset of particles. Triangles index into `vertices`,
/// which maps mesh vertex k to particle vertices[k].
struct TriMesh {
  std::vector<int> vertices;
  std::vector<Triangle> triangles;
  std::vector<Vec3> rest_positions;

  std::size_t vertex_count() const { return vertices.size(); }
  bool empty() const { return vertices.empty() || triangles.empty(); }

  /// Triangles with particle indices instead of mesh-local ones.
  std::vector<Triangle> particle_triangles() const {
    std::vector<Triangle> out;
    out.reserve(triangles.size());
    for (const auto& t : triangles) out.push_back({vertices[t[0]], vertices[t[1]], vertices[t[2]]});
    return out;
  }

  void validate(std::size_t particle_count) const {
    if (rest_positions.size() != vertices.size()) throw ConfigError("mesh rest positions and vertices differ in count");
    for (int v : vertices)
      if (v < 0 || std::size_t(v) >= particle_count) throw ConfigError("mesh vertex references a missing particle");
    for (const auto& t : triangles) {
      for (int k : t)
        if (k < 0 || std::size_t(k) >= vertices.size()) throw ConfigError("triangle references a missing vertex");
      const Vec3& a = rest_positions[t[0]];
      const double area = 0.5 * (rest_positions[t[1]] - a).cross(rest_positions[t[2]] - a).norm();
      if (!(area > 1e-12)) throw ConfigError("mesh has a degenerate rest triangle");
    }
  }

  /// Closed iff every undirected edge is shared by exactly two triangles.
  bool closed() const {
    std::map<std::pair<int, int>, int> uses;
    for (const auto& t : triangles)
      for (int e = 0; e < 3; ++e) ++uses[std::minmax(t[e], t[(e + 1) % 3])];
    if (uses.empty()) return false;
    return std::all_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 2; });
  }
};

struct DistanceConstraint {
  int i = 0, j = 0;
  double rest_length = 0;
  double stiffness = 1;
};

struct VolumeConstraint {
  std::vector<Triangle> triangles;  // particle indices, outward winding
  double rest_volume = 0;
  double stiffness = 1;
};

struct ShapeMatchingConstraint {
  std::vector<int> indices;
  std::vector<Vec3> rest;
  double stiffness = 1;
};

using Constraint = std::variant<DistanceConstraint, VolumeConstraint, ShapeMatchingConstraint>;

/// Time-stamped kinematic target for one particle.
struct Handle {
  struct Sample {
    double t = 0;
    Vec3 position = Vec3::Zero();
  };
  int particle = 0;
  std::vector<Sample> trajectory;  // sorted by t

  bool covers(double t) const {
    return !trajectory.empty() && t >= trajectory.front().t - 1e-12 && t <= trajectory.back().t + 1e-12;
  }

  /// Linear interpolation; nullopt outside the trajectory's time span.
  std::optional<Vec3> target(double t) const {
    if (!covers(t)) return std::nullopt;
    if (trajectory.size() == 1 || t <= trajectory.front().t) return trajectory.front().position;
    for (std::size_t k = 1; k < trajectory.size(); ++k) {
      const auto& a = trajectory[k - 1];
      const auto& b = trajectory[k];
      if (t <= b.t) {
        const double span = b.t - a.t;
        const double s = span > 0 ? (t - a.t) / span : 1.0;
        return ((1 - s) * a.position + s * b.position).eval();
      }
    }
    return trajectory.back().position;
  }
};

struct PBDState {
  std::vector<Particle> particles;
  std::vector<Constraint> constraints;
  TriMesh mesh;
  std::vector<Handle> handles;
  double time = 0;
  Vec3 gravity = Vec3::Zero();
  double damping = 0.99;

  // Inverse masses of particles currently held by a handle, restored on release.
  std::map<int, double> held;

  std::vector<Vec3> mesh_positions() const {
    std::vector<Vec3> out;
    out.reserve(mesh.vertices.size());
    for (int v : mesh.vertices) out.push_back(particles[v].x);
    return out;
  }
};

// --- constraint projections -------------------------------------------------

struct DistanceCorrection {
  Vec3 dp_i = Vec3::Zero();
  Vec3 dp_j = Vec3::Zero();
  bool degenerate = false;
};

inline DistanceCorrection project_distance(const Vec3& p_i, const Vec3& p_j, double w_i, double w_j,
                                           double rest_length, double stiffness) {
  DistanceCorrection c;
  const double wsum = w_i + w_j;
  if (!(wsum > 0)) return c;
  const Vec3 d = p_i - p_j;
  const double len = d.norm();
  if (len < 1e-12) {
    c.degenerate = true;
    return c;
  }
  const Vec3 n = d / len;
  const double s = stiffness * (len - rest_length) / wsum;
  c.dp_i = -w_i * s * n;
  c.dp_j = w_j * s * n;
  return c;
}

inline double signed_volume(std::span<const Vec3> positions, std::span<const Triangle> triangles) {
  double v = 0;
  for (const auto& t : triangles) v += positions[t[0]].dot(positions[t[1]].cross(positions[t[2]]));
  return v / 6.0;
}

struct Corrections {
  std::vector<Vec3> dp;
  bool degenerate = false;
};

/// Restores the signed volume enclosed by `triangles` toward rest_volume.
/// Indices in `triangles` address `positions` and `inv_mass`.
inline Corrections project_volume(std::span<const Vec3> positions, std::span<const double> inv_mass,
                                  std::span<const Triangle> triangles, double rest_volume, double stiffness) {
  Corrections c;
  c.dp.assign(positions.size(), Vec3::Zero());
  std::vector<Vec3> grad(positions.size(), Vec3::Zero());
  for (const auto& t : triangles) {
    const Vec3 &a = positions[t[0]], &b = positions[t[1]], &d = positions[t[2]];
    grad[t[0]] += b.cross(d) / 6.0;
    grad[t[1]] += d.cross(a) / 6.0;
    grad[t[2]] += a.cross(b) / 6.0;
  }
  double denom = 0;
  for (std::size_t i = 0; i < positions.size(); ++i) denom += inv_mass[i] * grad[i].squaredNorm();
  if (!(denom > 1e-30)) {
    c.degenerate = true;
    return c;
  }
  const double lambda = -stiffness * (signed_volume(positions, triangles) - rest_volume) / denom;
  for (std::size_t i = 0; i < positions.size(); ++i) c.dp[i] = lambda * inv_mass[i] * grad[i];
  return c;
}

inline constexpr double kPinnedMass = 1e12;

/// Best-fit rotation of `a` in the polar sense, with reflections removed.
/// Returns nullopt when the covariance is rank-deficient beyond a plane.
inline std::optional<Mat3> polar_rotation(const Mat3& a) {
  const Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0) || sv(1) <= 1e-12 * sv(0)) return std::nullopt;
  Mat3 u = svd.matrixU();
  if ((u * svd.matrixV().transpose()).determinant() < 0) u.col(2) *= -1;
  return u * svd.matrixV().transpose();
}

/// Moves cluster particles toward the rigidly fitted rest shape. Pinned
/// particles weigh kPinnedMass in the fit and are never moved.
inline Corrections project_shape_matching(std::span<const Vec3> positions, std::span<const Vec3> rest,
                                          std::span<const double> inv_mass, double stiffness) {
  const std::size_t n = positions.size();
  Corrections c;
  c.dp.assign(n, Vec3::Zero());
  std::vector<double> m(n);
  double mt = 0;
  Vec3 cx = Vec3::Zero(), cr = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = inv_mass[i] > 0 ? 1.0 / inv_mass[i] : kPinnedMass;
    mt += m[i];
    cx += m[i] * positions[i];
    cr += m[i] * rest[i];
  }
  cx /= mt;
  cr /= mt;
  Mat3 a = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) a += m[i] * (positions[i] - cx) * (rest[i] - cr).transpose();
  Mat3 r = Mat3::Identity();
  if (auto rot = polar_rotation(a)) r = *rot;
  else c.degenerate = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (inv_mass[i] == 0) continue;
    const Vec3 goal = r * (rest[i] - cr) + cx;
    c.dp[i] = stiffness * (goal - positions[i]);
  }
  return c;
}

// --- simulation --------------------------------------------------------------

namespace detail {

inline void project(PBDState& s, const DistanceConstraint& k) {
  auto& a = s.particles[k.i];
  auto& b = s.particles[k.j];
  const auto c = project_distance(a.p, b.p, a.inv_mass, b.inv_mass, k.rest_length, k.stiffness);
  a.p += c.dp_i;
  b.p += c.dp_j;
}

/// Gathers the particles referenced by a constraint into a local index space.
struct Gathered {
  std::vector<int> ids;
  std::vector<Vec3> p;
  std::vector<double> w;
};

inline Gathered gather(const PBDState& s, std::span<const int> ids) {
  Gathered g;
  g.ids.assign(ids.begin(), ids.end());
  for (int i : ids) {
    g.p.push_back(s.particles[i].p);
    g.w.push_back(s.particles[i].inv_mass);
  }
  return g;
}

inline void project(PBDState& s, const VolumeConstraint& k) {
  std::map<int, int> local;
  std::vector<int> ids;
  std::vector<Triangle> tris;
  for (const auto& t : k.triangles) {
    Triangle lt;
    for (int e = 0; e < 3; ++e) {
      auto [it, fresh] = local.try_emplace(t[e], int(ids.size()));
      if (fresh) ids.push_back(t[e]);
      lt[e] = it->second;
    }
    tris.push_back(lt);
  }
  const auto g = gather(s, ids);
  const auto c = project_volume(g.p, g.w, tris, k.rest_volume, k.stiffness);
  for (std::size_t i = 0; i < ids.size(); ++i) s.particles[ids[i]].p += c.dp[i];
}

inline void project(PBDState& s, const ShapeMatchingConstraint& k) {
  const auto g = gather(s, k.indices);
  const auto c = project_shape_matching(g.p, k.rest, g.w, k.stiffness);
  for (std::size_t i = 0; i < g.ids.size(); ++i) s.particles[g.ids[i]].p += c.dp[i];
}

}  // namespace detail

/// Holds or releases handle particles for the step ending at time t.
inline void apply_handles(PBDState& s, double t) {
  for (const auto& h : s.handles) {
    auto& part = s.particles[h.particle];
    if (auto target = h.target(t)) {
      if (!s.held.contains(h.particle)) s.held[h.particle] = part.inv_mass;
      part.inv_mass = 0;
      part.p = *target;
    } else if (auto it = s.held.find(h.particle); it != s.held.end()) {
      part.inv_mass = it->second;
      s.held.erase(it);
    }
  }
}

/// One PBD step: integrate, drive handles, project constraints in order
/// (Gauss-Seidel), then update velocities with damping.
inline void step(PBDState& s, double dt, int solver_iterations) {
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  if (solver_iterations < 1) throw ConfigError("solver_iterations must be at least 1");
  const double t_next = s.time + dt;
  // Handles first, so a released particle integrates freely this step with
  // the velocity of its last held step.
  apply_handles(s, t_next);
  for (std::size_t i = 0; i < s.particles.size(); ++i) {
    auto& part = s.particles[i];
    if (s.held.contains(int(i))) continue;
    if (part.inv_mass > 0) part.v += dt * s.gravity;
    part.p = part.x + dt * part.v;
  }
  for (int it = 0; it < solver_iterations; ++it)
    for (const auto& c : s.constraints) std::visit([&](const auto& k) { detail::project(s, k); }, c);
  for (std::size_t i = 0; i < s.particles.size(); ++i) {
    auto& part = s.particles[i];
    part.v = s.damping * (part.p - part.x) / dt;
    part.x = part.p;
    if (!part.x.allFinite() || !part.v.allFinite())
      throw SimulationError("particle " + std::to_string(i) + " became non-finite at t = " + std::to_string(t_next));
  }
  s.time = t_next;
}

struct ConstraintOptions {
  bool distance = true;
  bool volume = false;
  bool shape_matching = true;
  double distance_stiffness = 1.0;
  double volume_stiffness = 1.0;
  double shape_stiffness = 0.5;
};

/// Unique undirected mesh edges in particle indices, sorted.
inline std::vector<std::pair<int, int>> mesh_edges(const TriMesh& mesh) {
  std::set<std::pair<int, int>> e;
  for (const auto& t : mesh.particle_triangles())
    for (int k = 0; k < 3; ++k) e.insert(std::minmax(t[k], t[(k + 1) % 3]));
  return {e.begin(), e.end()};
}

/// Distance constraints on mesh edges, a shape-matching cluster per vertex
/// 1-ring, and one volume constraint for closed meshes.
inline std::vector<Constraint> auto_constraints(const PBDState& s, const ConstraintOptions& opt) {
  const TriMesh& mesh = s.mesh;
  std::map<int, Vec3> rest;
  for (std::size_t k = 0; k < mesh.vertices.size(); ++k) rest[mesh.vertices[k]] = mesh.rest_positions[k];
  std::vector<Constraint> out;
  const auto edges = mesh_edges(mesh);
  if (opt.distance)
    for (auto [i, j] : edges) out.push_back(DistanceConstraint{i, j, (rest[i] - rest[j]).norm(), opt.distance_stiffness});
  if (opt.shape_matching) {
    std::map<int, std::set<int>> ring;
    for (auto [i, j] : edges) {
      ring[i].insert(j);
      ring[j].insert(i);
    }
    for (int v : mesh.vertices) {
      ShapeMatchingConstraint sm;
      sm.stiffness = opt.shape_stiffness;
      sm.indices.push_back(v);
      for (int nb : ring[v]) sm.indices.push_back(nb);
      if (sm.indices.size() < 3) continue;
      for (int i : sm.indices) sm.rest.push_back(rest[i]);
      out.push_back(std::move(sm));
    }
  }
  if (opt.volume) {
    if (!mesh.closed()) throw ConfigError("volume constraint requires a closed mesh");
    VolumeConstraint vc;
    vc.triangles = mesh.particle_triangles();
    std::vector<Vec3> pos(s.particles.size());
    for (const auto& [i, r] : rest) pos[i] = r;
    vc.rest_volume = signed_volume(pos, vc.triangles);
    vc.stiffness = opt.volume_stiffness;
    out.push_back(std::move(vc));
  }
  return out;
}

/// State whose particles and mesh vertices coincide, at rest at `positions`.
inline PBDState make_state(const std::vector<Vec3>& positions, std::vector<Triangle> triangles,
                           std::span<const double> inv_mass = {}) {
  PBDState s;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    Particle part;
    part.x = part.p = positions[i];
    part.inv_mass = inv_mass.empty() ? 1.0 : inv_mass[i];
    if (!(part.inv_mass >= 0)) throw ConfigError("inverse mass must be non-negative");
    s.particles.push_back(part);
    s.mesh.vertices.push_back(int(i));
  }
  s.mesh.triangles = std::move(triangles);
  s.mesh.rest_positions = positions;
  s.mesh.validate(s.particles.size());
  return s;
}

/// Regular nx x ny grid of vertices spanning `size` in the local (u, v) plane,
/// placed at `origin` with in-plane axes `u_axis`, `v_axis`.
inline PBDState make_sheet(int nx, int ny, const Vec2& size, const Vec3& origin, const Vec3& u_axis = Vec3::UnitX(),
                           const Vec3& v_axis = Vec3::UnitY()) {
  if (nx < 2 || ny < 2) throw ConfigError("sheet needs at least 2x2 vertices");
  std::vector<Vec3> pos;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      pos.push_back(origin + u_axis * (size.x() * i / (nx - 1)) + v_axis * (size.y() * j / (ny - 1)));
  std::vector<Triangle> tris;
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const int a = j * nx + i, b = a + 1, c = a + nx, d = c + 1;
      tris.push_back({a, b, d});
      tris.push_back({a, d, c});
    }
  return make_state(pos, std::move(tris));
}

}  // namespace edtrack
