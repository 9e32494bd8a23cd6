#pragma once

#include <span>
#include <vector>

#include "edtrack/ed_graph.hpp"

namespace edtrack {

/// Per-node rotations/translations evaluated once per parameter vector.
template <typename Scalar>
struct EvaluatedWarp {
  std::vector<Mat3T<Scalar>> rotation;
  std::vector<Vec3T<Scalar>> translation;
  Mat3T<Scalar> global_rotation;
  Vec3T<Scalar> global_translation;
};

/// Evaluates rotations from a flat parameter vector (layout of WarpParams::flatten).
template <typename Scalar>
EvaluatedWarp<Scalar> evaluate_warp(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
  const std::size_t n = std::size_t(x.size() / kParamsPerTransform) - 1;
  EvaluatedWarp<Scalar> w;
  w.rotation.reserve(n);
  w.translation.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Vec4T<Scalar> q = x.template segment<4>(Eigen::Index(7 * j));
    w.rotation.push_back(rotation_from_quaternion<Scalar>(q));
    w.translation.push_back(x.template segment<3>(Eigen::Index(7 * j + 4)));
  }
  const Vec4T<Scalar> qg = x.template segment<4>(Eigen::Index(7 * n));
  w.global_rotation = rotation_from_quaternion<Scalar>(qg);
  w.global_translation = x.template segment<3>(Eigen::Index(7 * n + 4));
  return w;
}

inline EvaluatedWarp<double> evaluate_warp(const WarpParams& params) {
  return evaluate_warp<double>(params.flatten());
}

/// Blended node motion of p before the global transform:
/// sum_j w_j [R_j (p - g_j) + g_j + b_j].
template <typename Scalar>
Vec3T<Scalar> blend_position(const Vec3& p, std::span<const int> nodes, std::span<const double> weights,
                             const std::vector<Vec3>& rest, const EvaluatedWarp<Scalar>& w) {
  Vec3T<Scalar> acc = Vec3T<Scalar>::Zero();
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    const int j = nodes[a];
    const Vec3T<Scalar> local = (p - rest[j]).template cast<Scalar>();
    acc += Scalar(weights[a]) * (w.rotation[j] * local + rest[j].template cast<Scalar>() + w.translation[j]);
  }
  return acc;
}

template <typename Scalar>
Vec3T<Scalar> warp_position(const Vec3& p, std::span<const int> nodes, std::span<const double> weights,
                            const std::vector<Vec3>& rest, const EvaluatedWarp<Scalar>& w) {
  return w.global_rotation * blend_position(p, nodes, weights, rest, w) + w.global_translation;
}

/// Blended rotation of n, not renormalized.
template <typename Scalar>
Vec3T<Scalar> warp_direction(const Vec3& n, std::span<const int> nodes, std::span<const double> weights,
                             const EvaluatedWarp<Scalar>& w) {
  Vec3T<Scalar> acc = Vec3T<Scalar>::Zero();
  for (std::size_t a = 0; a < nodes.size(); ++a)
    acc += Scalar(weights[a]) * (w.rotation[nodes[a]] * n.template cast<Scalar>());
  return w.global_rotation * acc;
}

inline constexpr double kDegenerateNormal = 1e-8;

inline Vec3 renormalize_normal(const Vec3& blended) {
  const double len = blended.norm();
  if (!(len >= kDegenerateNormal)) throw NumericError("blended normal is degenerate (near-zero length)");
  return blended / len;
}

/// Warps a single point with freshly computed KNN weights.
inline Vec3 skin_point(const Vec3& p, const EDGraph& graph, const WarpParams& params) {
  const auto nw = knn_weights(p, graph);
  std::vector<int> nodes;
  std::vector<double> weights;
  for (const auto& e : nw) {
    nodes.push_back(e.node);
    weights.push_back(e.weight);
  }
  return warp_position<double>(p, nodes, weights, graph.nodes, evaluate_warp(params));
}

/// Warps a unit normal attached at p; the result is renormalized.
inline Vec3 skin_normal(const Vec3& n, const Vec3& p, const EDGraph& graph, const WarpParams& params) {
  const auto nw = knn_weights(p, graph);
  std::vector<int> nodes;
  std::vector<double> weights;
  for (const auto& e : nw) {
    nodes.push_back(e.node);
    weights.push_back(e.weight);
  }
  return renormalize_normal(warp_direction<double>(n, nodes, weights, evaluate_warp(params)));
}

/// Warped positions for a whole point set with precomputed skinning.
inline std::vector<Vec3> warp_positions(std::span<const Vec3> points, const Skinning& skin, const EDGraph& graph,
                                        const EvaluatedWarp<double>& w) {
  std::vector<Vec3> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    out[i] = warp_position<double>(points[i], skin.nodes_of(i), skin.weights_of(i), graph.nodes, w);
  return out;
}

/// Warped unit normals; degenerate blends throw.
inline std::vector<Vec3> warp_normals(std::span<const Vec3> normals, const Skinning& skin,
                                      const EvaluatedWarp<double>& w) {
  std::vector<Vec3> out(normals.size());
  for (std::size_t i = 0; i < normals.size(); ++i)
    out[i] = renormalize_normal(warp_direction<double>(normals[i], skin.nodes_of(i), skin.weights_of(i), w));
  return out;
}

}  // namespace edtrack
