#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "edtrack/kdtree.hpp"
#include "edtrack/quaternion.hpp"

namespace edtrack {

using Edge = std::pair<int, int>;

/// Embedded-deformation graph: node rest positions and undirected edges.
/// Per-node rotations and translations live in WarpParams.
struct EDGraph {
  std::vector<Vec3> nodes;
  std::vector<Edge> edges;  // stored with first < second, sorted, unique
  int k_neighbors = 4;

  std::size_t size() const { return nodes.size(); }

  void validate() const {
    const int n = int(nodes.size());
    std::set<Edge> seen;
    for (auto [a, b] : edges) {
      if (a < 0 || b < 0 || a >= n || b >= n) throw ConfigError("ED graph edge references a missing node");
      if (a == b) throw ConfigError("ED graph edge is a self-loop");
      if (!seen.insert({std::min(a, b), std::max(a, b)}).second)
        throw ConfigError("ED graph has a duplicate edge");
    }
  }
};

struct NodeParams {
  Vec4 q = identity_quaternion();
  Vec3 b = Vec3::Zero();

  RigidTransform transform() const { return quat_transform(q, b); }
};

inline constexpr int kParamsPerTransform = 7;

/// Optimization variables: one (q, b) per node plus a global (q, b).
/// Flattened layout: node j occupies [7j, 7j + 7) as (qw, qx, qy, qz, bx, by, bz);
/// the global transform takes the final 7 entries.
struct WarpParams {
  std::vector<NodeParams> nodes;
  NodeParams global;

  static WarpParams identity(std::size_t node_count) {
    WarpParams p;
    p.nodes.assign(node_count, NodeParams{});
    return p;
  }

  std::size_t flat_size() const { return kParamsPerTransform * (nodes.size() + 1); }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(flat_size()));
    for (std::size_t j = 0; j <= nodes.size(); ++j) {
      const NodeParams& np = j < nodes.size() ? nodes[j] : global;
      x.segment<4>(Eigen::Index(7 * j)) = np.q;
      x.segment<3>(Eigen::Index(7 * j + 4)) = np.b;
    }
    return x;
  }

  static WarpParams unflatten(const Eigen::VectorXd& x) {
    if (x.size() < 7 || x.size() % 7 != 0) throw InvalidParameterError("flat warp vector length is not a multiple of 7");
    WarpParams p;
    const std::size_t n = std::size_t(x.size() / 7) - 1;
    p.nodes.resize(n);
    for (std::size_t j = 0; j <= n; ++j) {
      NodeParams& np = j < n ? p.nodes[j] : p.global;
      np.q = x.segment<4>(Eigen::Index(7 * j));
      np.b = x.segment<3>(Eigen::Index(7 * j + 4));
    }
    return p;
  }
};

struct NodeWeight {
  int node = -1;
  double weight = 0;
};

/// k nearest nodes of p with normalized weights exp(-|p - g_j|) over that set.
inline std::vector<NodeWeight> knn_weights(const Vec3& p, const EDGraph& graph, const KdTree& node_tree) {
  const int k = graph.k_neighbors;
  if (k < 1) throw ConfigError("k_neighbors must be at least 1");
  if (int(graph.nodes.size()) < k)
    throw ConfigError("ED graph has " + std::to_string(graph.nodes.size()) + " nodes, fewer than k_neighbors = " +
                      std::to_string(k));
  const auto nn = node_tree.knn(p, k);
  // Shift by the smallest distance before exponentiating; the ratio is unchanged.
  const double d0 = nn.front().distance;
  std::vector<NodeWeight> out;
  out.reserve(nn.size());
  double sum = 0;
  for (const auto& n : nn) {
    const double e = std::exp(-(n.distance - d0));
    out.push_back({n.index, e});
    sum += e;
  }
  for (auto& w : out) w.weight /= sum;
  return out;
}

inline std::vector<NodeWeight> knn_weights(const Vec3& p, const EDGraph& graph) {
  return knn_weights(p, graph, KdTree(graph.nodes));
}

/// Per-point neighborhoods, flattened as point i -> entries [i*k, (i+1)*k).
struct Skinning {
  int k = 0;
  std::vector<int> node;
  std::vector<double> weight;

  std::size_t point_count() const { return k == 0 ? 0 : node.size() / std::size_t(k); }
  std::span<const int> nodes_of(std::size_t i) const { return {node.data() + i * k, std::size_t(k)}; }
  std::span<const double> weights_of(std::size_t i) const { return {weight.data() + i * k, std::size_t(k)}; }
};

inline Skinning compute_skinning(std::span<const Vec3> points, const EDGraph& graph) {
  Skinning s;
  s.k = graph.k_neighbors;
  s.node.reserve(points.size() * std::size_t(s.k));
  s.weight.reserve(points.size() * std::size_t(s.k));
  const KdTree tree(graph.nodes);
  for (const Vec3& p : points) {
    for (const auto& nw : knn_weights(p, graph, tree)) {
      s.node.push_back(nw.node);
      s.weight.push_back(nw.weight);
    }
  }
  return s;
}

struct GraphOptions {
  double node_spacing = 0.01;
  int k_neighbors = 4;
  int k_edges = 8;
};

namespace detail {

inline std::vector<Edge> normalize_edges(std::vector<Edge> edges) {
  for (auto& e : edges)
    if (e.first > e.second) std::swap(e.first, e.second);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

inline int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) i = parent[i] = parent[parent[i]];
  return i;
}

/// Adds edges from each listed node to its k nearest other nodes.
inline void connect_knn(const std::vector<Vec3>& nodes, std::span<const int> which, int k_edges,
                        std::vector<Edge>& edges) {
  const KdTree tree(nodes);
  for (int i : which) {
    for (const auto& n : tree.knn(nodes[i], k_edges + 1)) {
      if (n.index != i) edges.emplace_back(i, n.index);
    }
  }
}

/// Joins components by repeatedly adding the shortest edge between the
/// component of node 0 and any other component.
inline void bridge_components(const std::vector<Vec3>& nodes, std::vector<Edge>& edges) {
  const int n = int(nodes.size());
  if (n <= 1) return;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  for (auto [a, b] : edges) parent[find_root(parent, a)] = find_root(parent, b);
  while (true) {
    const int root0 = find_root(parent, 0);
    double best = std::numeric_limits<double>::infinity();
    Edge best_edge{-1, -1};
    for (int i = 0; i < n; ++i) {
      if (find_root(parent, i) != root0) continue;
      for (int j = 0; j < n; ++j) {
        if (find_root(parent, j) == root0) continue;
        const double d = (nodes[i] - nodes[j]).squaredNorm();
        if (d < best) {
          best = d;
          best_edge = {i, j};
        }
      }
    }
    if (best_edge.first < 0) break;
    edges.push_back(best_edge);
    parent[find_root(parent, best_edge.second)] = root0;
  }
}

}  // namespace detail

/// Voxel-grid subsample of the cloud (centroid per occupied voxel) joined to
/// k_edges nearest neighbors, symmetrized and bridged into one component.
inline EDGraph build_ed_graph(std::span<const Vec3> points, const GraphOptions& opt) {
  if (!(opt.node_spacing > 0)) throw ConfigError("node_spacing must be positive");
  if (opt.k_neighbors < 1) throw ConfigError("k_neighbors must be at least 1");
  if (points.empty()) throw ConfigError("cannot build an ED graph from an empty cloud");

  using Key = std::tuple<long long, long long, long long>;
  std::map<Key, std::pair<Vec3, int>> voxels;
  for (const Vec3& p : points) {
    const Key key{(long long)std::floor(p.x() / opt.node_spacing), (long long)std::floor(p.y() / opt.node_spacing),
                  (long long)std::floor(p.z() / opt.node_spacing)};
    auto& acc = voxels.try_emplace(key, Vec3::Zero(), 0).first->second;
    acc.first += p;
    acc.second += 1;
  }
  EDGraph g;
  g.nodes.reserve(voxels.size());
  for (const auto& [key, acc] : voxels) g.nodes.push_back(acc.first / acc.second);

  std::vector<int> all(g.nodes.size());
  std::iota(all.begin(), all.end(), 0);
  detail::connect_knn(g.nodes, all, opt.k_edges, g.edges);
  detail::bridge_components(g.nodes, g.edges);
  g.edges = detail::normalize_edges(std::move(g.edges));
  g.k_neighbors = std::min<int>(opt.k_neighbors, int(g.nodes.size()));
  return g;
}

inline EDGraph build_ed_graph(const SurfelCloud& cloud, const GraphOptions& opt) {
  const auto pts = cloud.positions();
  return build_ed_graph(pts, opt);
}

/// Appends nodes at the listed positions that lie farther than node_spacing
/// from every existing node, and wires them in. Returns the number added.
inline int grow_ed_graph(EDGraph& g, std::span<const Vec3> candidates, const GraphOptions& opt) {
  const std::size_t before = g.nodes.size();
  for (const Vec3& c : candidates) {
    bool far = true;
    for (const Vec3& n : g.nodes) {
      if ((n - c).norm() <= opt.node_spacing) {
        far = false;
        break;
      }
    }
    if (far) g.nodes.push_back(c);
  }
  const int added = int(g.nodes.size() - before);
  if (added == 0) return 0;
  std::vector<int> fresh(static_cast<std::size_t>(added));
  std::iota(fresh.begin(), fresh.end(), int(before));
  detail::connect_knn(g.nodes, fresh, opt.k_edges, g.edges);
  detail::bridge_components(g.nodes, g.edges);
  g.edges = detail::normalize_edges(std::move(g.edges));
  g.k_neighbors = std::min<int>(opt.k_neighbors, int(g.nodes.size()));
  return added;
}

}  // namespace edtrack
