#pragma once

#include <span>
#include <vector>

#include "edtrack/association.hpp"
#include "edtrack/warp.hpp"

namespace edtrack {

struct CostWeights {
  double lambda_icp = 1.0;
  double lambda_r = 10.0;
  double lambda_c = 0.001;
  CostMode mode = CostMode::Icp;

  double data_weight() const { return mode == CostMode::Icp ? lambda_icp : lambda_c; }

  void validate() const {
    if (!(lambda_icp >= 0 && lambda_r >= 0 && lambda_c >= 0)) throw ConfigError("cost weights must be non-negative");
  }
};

/// Everything the objective depends on for one frame's solve. Skinning is
/// computed from the canonical positions once and held fixed.
struct SolveState {
  EDGraph graph;
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  Skinning skinning;
  WarpParams params;

  static SolveState make(EDGraph graph, std::vector<Vec3> positions, std::vector<Vec3> normals) {
    SolveState s;
    s.graph = std::move(graph);
    s.positions = std::move(positions);
    s.normals = std::move(normals);
    s.skinning = compute_skinning(s.positions, s.graph);
    s.params = WarpParams::identity(s.graph.size());
    return s;
  }

  std::vector<Vec3> warped_positions() const {
    return edtrack::warp_positions(positions, skinning, graph, evaluate_warp(params));
  }
  std::vector<Vec3> warped_normals() const { return edtrack::warp_normals(normals, skinning, evaluate_warp(params)); }
};

/// sum over valid entries of (n_o . (p - p_o))^2
inline double icp_cost(const CorrespondenceSet& corr, std::span<const Vec3> warped) {
  double sum = 0;
  for (std::size_t i = 0; i < corr.entries.size(); ++i) {
    const auto& e = corr.entries[i];
    if (!e.valid) continue;
    const double r = e.target_normal.dot(warped[i] - e.target_position);
    sum += r * r;
  }
  return sum;
}

/// sum over valid entries of |p - p_hat|^2
inline double corr_cost(const CorrespondenceSet& corr, std::span<const Vec3> warped) {
  double sum = 0;
  for (std::size_t i = 0; i < corr.entries.size(); ++i) {
    const auto& e = corr.entries[i];
    if (e.valid) sum += (warped[i] - e.target_position).squaredNorm();
  }
  return sum;
}

/// Residual of edge j -> k: R_j (g_k - g_j) + b_j + g_j - (g_k + b_k).
template <typename Scalar>
Vec3T<Scalar> arap_residual(const EDGraph& g, const EvaluatedWarp<Scalar>& w, int j, int k) {
  const Vec3 d = g.nodes[k] - g.nodes[j];
  return w.rotation[j] * d.template cast<Scalar>() + w.translation[j] - w.translation[k] - d.template cast<Scalar>();
}

template <typename Scalar>
Scalar arap_cost(const EDGraph& g, const EvaluatedWarp<Scalar>& w) {
  Scalar sum(0);
  for (auto [a, b] : g.edges) {
    sum += arap_residual(g, w, a, b).squaredNorm();
    sum += arap_residual(g, w, b, a).squaredNorm();
  }
  return sum;
}

/// Symmetrized embedded-deformation smoothness over all edges.
inline double arap_cost(const EDGraph& g, const WarpParams& params) { return arap_cost<double>(g, evaluate_warp(params)); }

/// sum over every quaternion (nodes and global) of (|q|^2 - 1)^2
template <typename Scalar>
Scalar quat_norm_cost(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
  Scalar sum(0);
  for (Eigen::Index j = 0; j < x.size(); j += kParamsPerTransform) {
    const Scalar s = x.template segment<4>(j).squaredNorm() - Scalar(1);
    sum += s * s;
  }
  return sum;
}

inline double quat_norm_cost(const WarpParams& params) { return quat_norm_cost<double>(params.flatten()); }

struct CostBreakdown {
  double data = 0;   // unweighted L_icp or L_corr
  double arap = 0;
  double quat = 0;
  double total = 0;  // weighted sum
  double valid_fraction = 0;
  bool no_valid_correspondences = false;
};

inline void check_mode(const CorrespondenceSet& corr, const CostWeights& weights) {
  if (corr.mode != weights.mode)
    throw ConfigError(std::string("correspondence set is in ") + to_string(corr.mode) + " mode but weights select " +
                      to_string(weights.mode));
}

/// Total objective at a flat parameter vector, generic over the scalar so the
/// same expression serves forward-mode differentiation.
template <typename Scalar>
Scalar total_cost_at(const SolveState& s, const CorrespondenceSet& corr, const CostWeights& weights,
                     const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
  const EvaluatedWarp<Scalar> w = evaluate_warp<Scalar>(x);
  Scalar data(0);
  for (std::size_t i = 0; i < s.positions.size(); ++i) {
    const auto& e = corr.entries[i];
    if (!e.valid) continue;
    const Vec3T<Scalar> p =
        warp_position<Scalar>(s.positions[i], s.skinning.nodes_of(i), s.skinning.weights_of(i), s.graph.nodes, w);
    const Vec3T<Scalar> r = p - e.target_position.template cast<Scalar>();
    if (weights.mode == CostMode::Icp) {
      const Scalar t = e.target_normal.template cast<Scalar>().dot(r);
      data += t * t;
    } else {
      data += r.squaredNorm();
    }
  }
  return Scalar(weights.data_weight()) * data + Scalar(weights.lambda_r) * (arap_cost<Scalar>(s.graph, w) + quat_norm_cost<Scalar>(x));
}

/// Per-term values of the objective at the state's current parameters.
inline CostBreakdown evaluate_costs(const SolveState& s, const CorrespondenceSet& corr, const CostWeights& weights) {
  check_mode(corr, weights);
  if (corr.size() != s.positions.size()) throw ConfigError("correspondence set size differs from surfel count");
  const auto warped = s.warped_positions();
  CostBreakdown c;
  c.data = weights.mode == CostMode::Icp ? icp_cost(corr, warped) : corr_cost(corr, warped);
  c.arap = arap_cost(s.graph, s.params);
  c.quat = quat_norm_cost(s.params);
  c.total = weights.data_weight() * c.data + weights.lambda_r * (c.arap + c.quat);
  c.valid_fraction = corr.valid_fraction();
  c.no_valid_correspondences = corr.valid_count() == 0;
  return c;
}

inline double total_cost(const SolveState& s, const CorrespondenceSet& corr, const CostWeights& weights) {
  return evaluate_costs(s, corr, weights).total;
}

}  // namespace edtrack
