#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "edtrack/association.hpp"
#include "edtrack/depth.hpp"
#include "edtrack/pipeline/config.hpp"

namespace edtrack {

struct FusionResult {
  SurfelCloud cloud;
  int merged = 0;
  int spawned = 0;
  std::vector<Vec3> new_positions;  // positions of spawned surfels, in order
};

/// Merges an observed frame into the warped cloud. Surfels that pass the
/// projective gates are averaged with their observation, weighted
/// (confidence, 1). Observed masked pixels that no surfel covers spawn new
/// surfels, appended after the existing ones. Nothing is removed.
inline FusionResult fuse_frame(const SurfelCloud& warped, const DepthFrame& frame, const NormalMap& normals,
                               const CameraIntrinsics& intr, const AssociationOptions& gates = {},
                               const FusionOptions& opt = {}, const SurfelInitOptions& init = {}) {
  FusionResult out;
  out.cloud = warped;
  out.cloud.frame_id = frame.frame_id;
  if (!opt.enabled) return out;

  const auto pos = warped.positions();
  const auto nrm = warped.normals();
  const CorrespondenceSet obs = projective_associate(pos, nrm, frame, normals, intr, gates);
  for (std::size_t i = 0; i < obs.entries.size(); ++i) {
    const auto& e = obs.entries[i];
    if (!e.valid) continue;
    Surfel& s = out.cloud.surfels[i];
    const double c = s.confidence;
    s.position = (c * s.position + e.target_position) / (c + 1.0);
    const Vec3 n = c * s.normal + e.target_normal;
    if (n.norm() > kDegenerateNormal) s.normal = n.normalized();
    s.confidence = c + 1.0;
    s.timestamp = frame.frame_id;
    ++out.merged;
  }
  if (!opt.spawn) return out;

  // A surfel covers the pixels within its projected radius whose observed
  // depth agrees with it.
  Image<std::uint8_t> covered(intr.width, intr.height, 0);
  for (const Surfel& s : out.cloud.surfels) {
    const auto uv = project(s.position, intr);
    if (!uv) continue;
    const double r = std::max(opt.min_cover_px, intr.focal_mean() * s.radius / s.position.z());
    const int u0 = int(std::floor(uv->x() - r)), u1 = int(std::ceil(uv->x() + r));
    const int v0 = int(std::floor(uv->y() - r)), v1 = int(std::ceil(uv->y() + r));
    for (int v = std::max(v0, 0); v <= std::min(v1, intr.height - 1); ++v)
      for (int u = std::max(u0, 0); u <= std::min(u1, intr.width - 1); ++u) {
        if ((Vec2(u, v) - *uv).norm() > r) continue;
        if (!frame.valid(u, v) || std::abs(frame.depth(u, v) - s.position.z()) > gates.occlusion_gate) continue;
        covered(u, v) = 1;
      }
  }
  for (int v = 0; v < intr.height; ++v)
    for (int u = 0; u < intr.width; ++u) {
      if (covered(u, v) || !frame.valid(u, v) || !frame.masked(u, v) || normals(u, v).isZero()) continue;
      out.cloud.surfels.push_back(make_surfel(u, v, frame, normals(u, v), intr, init));
      out.new_positions.push_back(out.cloud.surfels.back().position);
      ++out.spawned;
    }
  return out;
}

}  // namespace edtrack
