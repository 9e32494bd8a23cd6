#pragma once

#include <algorithm>
#include <cmath>

#include "edtrack/types.hpp"

namespace edtrack {

/// Per-pixel normals from central differences of the back-projected depth,
/// falling back to one-sided differences at holes. Normals face the camera
/// (n_z < 0). Pixels without a usable horizontal and vertical tangent are
/// left invalid (zero vector).
inline NormalMap normals_from_depth(const DepthFrame& frame, const CameraIntrinsics& intr) {
  const DepthMap& d = frame.depth;
  NormalMap out(d.width, d.height, Vec3::Zero());
  auto valid = [&](int u, int v) { return d.contains(u, v) && d(u, v) > 0; };
  auto point = [&](int u, int v) { return back_project(u, v, d(u, v), intr); };

  for (int v = 0; v < d.height; ++v) {
    for (int u = 0; u < d.width; ++u) {
      if (!valid(u, v)) continue;
      const Vec3 c = point(u, v);
      Vec3 tu, tv;
      if (valid(u + 1, v) && valid(u - 1, v)) tu = point(u + 1, v) - point(u - 1, v);
      else if (valid(u + 1, v)) tu = point(u + 1, v) - c;
      else if (valid(u - 1, v)) tu = c - point(u - 1, v);
      else continue;
      if (valid(u, v + 1) && valid(u, v - 1)) tv = point(u, v + 1) - point(u, v - 1);
      else if (valid(u, v + 1)) tv = point(u, v + 1) - c;
      else if (valid(u, v - 1)) tv = c - point(u, v - 1);
      else continue;
      Vec3 n = tu.cross(tv);
      const double len = n.norm();
      if (!(len > 0)) continue;
      n /= len;
      if (n.z() > 0) n = -n;
      out(u, v) = n;
    }
  }
  return out;
}

struct SurfelInitOptions {
  double min_radius_footprints = 0.25;
  double max_radius_footprints = 4.0;
  Vec3 color = Vec3::Constant(0.5);
};

/// Radius r = depth / (sqrt(2) f |n_z|), clamped to a range of pixel footprints.
inline double surfel_radius(double depth, const Vec3& normal, const CameraIntrinsics& intr,
                            const SurfelInitOptions& opt = {}) {
  const double footprint = depth / intr.focal_mean();
  const double nz = std::abs(normal.z());
  const double r = nz > 0 ? depth / (std::sqrt(2.0) * intr.focal_mean() * nz)
                          : opt.max_radius_footprints * footprint;
  return std::clamp(r, opt.min_radius_footprints * footprint, opt.max_radius_footprints * footprint);
}

inline Surfel make_surfel(int u, int v, const DepthFrame& frame, const Vec3& normal, const CameraIntrinsics& intr,
                          const SurfelInitOptions& opt = {}) {
  Surfel s;
  const double z = frame.depth(u, v);
  s.position = back_project(u, v, z, intr);
  s.normal = normal;
  s.color = opt.color;
  s.radius = surfel_radius(z, normal, intr, opt);
  s.confidence = 1.0;
  s.timestamp = frame.frame_id;
  return s;
}

/// One surfel per masked pixel with valid depth and normal, in raster order.
inline SurfelCloud surfels_from_depth(const DepthFrame& frame, const NormalMap& normals, const CameraIntrinsics& intr,
                                      const SurfelInitOptions& opt = {}) {
  frame.validate(intr);
  SurfelCloud cloud;
  cloud.frame_id = frame.frame_id;
  for (int v = 0; v < frame.depth.height; ++v) {
    for (int u = 0; u < frame.depth.width; ++u) {
      if (!frame.masked(u, v) || !frame.valid(u, v)) continue;
      const Vec3& n = normals(u, v);
      if (n.isZero()) continue;
      cloud.surfels.push_back(make_surfel(u, v, frame, n, intr, opt));
    }
  }
  return cloud;
}

inline SurfelCloud surfels_from_depth(const DepthFrame& frame, const CameraIntrinsics& intr,
                                      const SurfelInitOptions& opt = {}) {
  return surfels_from_depth(frame, normals_from_depth(frame, intr), intr, opt);
}

}  // namespace edtrack
