#include <gtest/gtest.h>

#include <numbers>
#include <queue>
#include <set>

#include "edtrack/depth.hpp"
#include "edtrack/warp.hpp"
#include "test_support.hpp"

using namespace edtrack;
using edtrack::testing::random_points;
using edtrack::testing::random_quaternion_near_identity;
using edtrack::testing::random_vec;

namespace {

EDGraph graph_of(std::vector<Vec3> nodes, int k) {
  EDGraph g;
  g.nodes = std::move(nodes);
  g.k_neighbors = k;
  return g;
}

bool connected(const EDGraph& g) {
  if (g.nodes.empty()) return true;
  std::vector<std::vector<int>> adj(g.nodes.size());
  for (auto [a, b] : g.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(g.nodes.size(), false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    int i = q.front();
    q.pop();
    for (int j : adj[i])
      if (!seen[j]) {
        seen[j] = true;
        ++count;
        q.push(j);
      }
  }
  return count == g.nodes.size();
}

}  // namespace

TEST(KdTree, MatchesBruteForceKnn) {
  std::mt19937 rng(7);
  const auto pts = random_points(rng, 300, -1, 1);
  const KdTree tree(pts);
  for (int t = 0; t < 50; ++t) {
    const Vec3 q = random_vec(rng, -1.2, 1.2);
    std::vector<Neighbor> brute;
    for (int i = 0; i < int(pts.size()); ++i) brute.push_back({i, (pts[i] - q).norm()});
    std::sort(brute.begin(), brute.end());
    const auto got = tree.knn(q, 5);
    ASSERT_EQ(got.size(), 5u);
    for (int a = 0; a < 5; ++a) {
      EXPECT_EQ(got[a].index, brute[a].index);
      EXPECT_NEAR(got[a].distance, brute[a].distance, 1e-12);
    }
    const auto within = tree.radius_search(q, 0.3);
    std::size_t expected = 0;
    for (const auto& b : brute) expected += b.distance <= 0.3 ? 1 : 0;
    EXPECT_EQ(within.size(), expected);
  }
}

TEST(KnnWeights, EquidistantNodesShareWeightEqually) {
  const auto g = graph_of({{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {5, 5, 5}}, 4);
  const auto w = knn_weights(Vec3::Zero(), g);
  ASSERT_EQ(w.size(), 4u);
  for (const auto& e : w) {
    EXPECT_NEAR(e.weight, 0.25, 1e-12);
    EXPECT_NE(e.node, 4);
  }
}

TEST(KnnWeights, SingleNodeGetsFullWeight) {
  const auto g = graph_of({{0.3, 0.2, 0.1}}, 1);
  const auto w = knn_weights(Vec3(1, 2, 3), g);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_DOUBLE_EQ(w[0].weight, 1.0);
}

TEST(KnnWeights, ExponentialFalloffMatchesFormula) {
  const auto g = graph_of({{1, 0, 0}, {-2, 0, 0}, {10, 0, 0}}, 2);
  const auto w = knn_weights(Vec3::Zero(), g);
  // Oracle: evaluate exp(-d) / sum exp(-d) directly.
  const double e1 = std::exp(-1.0), e2 = std::exp(-2.0);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].node, 0);
  EXPECT_NEAR(w[0].weight, e1 / (e1 + e2), 1e-12);
  EXPECT_NEAR(w[1].weight, e2 / (e1 + e2), 1e-12);
  EXPECT_NEAR(w[0].weight, 0.7311, 1e-4);
  EXPECT_NEAR(w[1].weight, 0.2689, 1e-4);
}

TEST(KnnWeights, TooFewNodesIsConfigError) {
  const auto g = graph_of({{0, 0, 0}, {1, 0, 0}}, 4);
  EXPECT_THROW(knn_weights(Vec3::Zero(), g), ConfigError);
}

TEST(KnnWeights, PropertySumToOneAndInUnitInterval) {
  std::mt19937 rng(11);
  for (int t = 0; t < 100; ++t) {
    const auto g = graph_of(random_points(rng, 12, -0.1, 0.1), 4);
    const auto w = knn_weights(random_vec(rng, -0.2, 0.2), g);
    double sum = 0;
    for (const auto& e : w) {
      EXPECT_GT(e.weight, 0.0);
      EXPECT_LE(e.weight, 1.0);
      sum += e.weight;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(QuatTransform, IdentityQuarterTurnAndDirections) {
  EXPECT_TRUE(quat_transform(identity_quaternion(), Vec3::Zero()).apply_point({1, 2, 3}).isApprox(Vec3(1, 2, 3)));
  const auto qz = axis_angle_quaternion(Vec3::UnitZ(), std::numbers::pi / 2);
  EXPECT_TRUE(quat_transform(qz, Vec3::Zero()).apply_point(Vec3::UnitX()).isApprox(Vec3::UnitY(), 1e-12));
  const auto t = quat_transform(identity_quaternion(), Vec3(0, 0, 1));
  const Eigen::Vector4d dir = t.apply(Eigen::Vector4d(1, 0, 0, 0));
  EXPECT_TRUE(dir.isApprox(Eigen::Vector4d(1, 0, 0, 0)));
  const Eigen::Vector4d pt = t.apply(Eigen::Vector4d(1, 0, 0, 1));
  EXPECT_TRUE(pt.isApprox(Eigen::Vector4d(1, 0, 1, 1)));
}

TEST(QuatTransform, ScaleInvariantAndZeroRejected) {
  const Vec4 q = axis_angle_quaternion(Vec3(1, 2, 3), 0.7);
  EXPECT_TRUE(quat_transform(3.5 * q, Vec3::Zero()).rotation.isApprox(quat_transform(q, Vec3::Zero()).rotation, 1e-12));
  EXPECT_THROW(quat_transform(Vec4::Zero(), Vec3::Zero()), InvalidParameterError);
}

TEST(QuatTransform, MatchesEigenQuaternion) {
  std::mt19937 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Vec4 q = random_quaternion_near_identity(rng, 0.8);
    const Eigen::Quaterniond eq(q(0), q(1), q(2), q(3));
    EXPECT_TRUE(rotation_from_quaternion<double>(q).isApprox(eq.normalized().toRotationMatrix(), 1e-12));
  }
}

TEST(RotationJacobian, MatchesCentralDifferences) {
  std::mt19937 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Vec4 q = random_quaternion_near_identity(rng, 0.5);
    const auto jac = rotation_jacobian(q);
    for (int k = 0; k < 4; ++k) {
      Vec4 qp = q, qm = q;
      qp(k) += 1e-6;
      qm(k) -= 1e-6;
      const Mat3 fd = (rotation_from_quaternion<double>(qp) - rotation_from_quaternion<double>(qm)) / 2e-6;
      EXPECT_LT((fd - jac[k]).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(SkinPoint, IdentityTranslationAndGlobalMotion) {
  std::mt19937 rng(2);
  const auto g = graph_of(random_points(rng, 8, -0.05, 0.05), 4);
  const Vec3 p(0.01, -0.02, 0.03);
  auto params = WarpParams::identity(g.size());
  EXPECT_TRUE(skin_point(p, g, params).isApprox(p, 1e-15));

  const auto single = graph_of({{0, 0, 0.5}}, 1);
  auto one = WarpParams::identity(1);
  one.nodes[0].b = Vec3(0.01, 0, 0);
  EXPECT_TRUE(skin_point(p, single, one).isApprox(p + Vec3(0.01, 0, 0), 1e-14));

  params.global.b = Vec3(0, 0, 0.05);
  EXPECT_TRUE(skin_point(p, g, params).isApprox(p + Vec3(0, 0, 0.05), 1e-14));
}

TEST(SkinPoint, PropertyIdentityWarpIsIdentity) {
  std::mt19937 rng(21);
  const auto g = graph_of(random_points(rng, 15, -0.1, 0.1), 4);
  const auto params = WarpParams::identity(g.size());
  for (int t = 0; t < 100; ++t) {
    const Vec3 p = random_vec(rng, -0.1, 0.1);
    EXPECT_LT((skin_point(p, g, params) - p).norm(), 1e-15);
  }
}

TEST(SkinPoint, PropertySingleNodeEqualsTransformAboutNode) {
  std::mt19937 rng(22);
  for (int t = 0; t < 50; ++t) {
    const Vec3 node = random_vec(rng, -0.1, 0.1);
    const auto g = graph_of({node}, 1);
    auto params = WarpParams::identity(1);
    params.nodes[0].q = random_quaternion_near_identity(rng, 0.4);
    params.nodes[0].b = random_vec(rng, -0.05, 0.05);
    const auto tr = quat_transform(params.nodes[0].q, params.nodes[0].b);
    const Vec3 p = random_vec(rng, -0.1, 0.1);
    const Vec3 n = random_vec(rng, -1, 1).normalized();
    EXPECT_LT((skin_point(p, g, params) - (tr.apply_point(p - node) + node)).norm(), 1e-9);
    EXPECT_LT((skin_normal(n, p, g, params) - tr.apply_direction(n)).norm(), 1e-9);
  }
}

TEST(SkinPoint, PropertySharedNodeMotionClosedForm) {
  std::mt19937 rng(23);
  for (int t = 0; t < 30; ++t) {
    const auto g = graph_of(random_points(rng, 10, -0.05, 0.05), 4);
    auto params = WarpParams::identity(g.size());
    const Vec3 b = random_vec(rng, -0.02, 0.02);
    for (auto& np : params.nodes) np.b = b;
    const Vec3 p = random_vec(rng, -0.04, 0.04);
    // Shared translation is a rigid motion of every point.
    EXPECT_LT((skin_point(p, g, params) - (p + b)).norm(), 1e-9);

    // Shared rotation: R p + b + (I - R) * sum_j w_j g_j.
    const Vec4 q = random_quaternion_near_identity(rng, 0.3);
    for (auto& np : params.nodes) np.q = q;
    const Mat3 r = rotation_from_quaternion<double>(q);
    Vec3 centroid = Vec3::Zero();
    for (const auto& nw : knn_weights(p, g)) centroid += nw.weight * g.nodes[nw.node];
    const Vec3 expected = r * p + b + (Mat3::Identity() - r) * centroid;
    EXPECT_LT((skin_point(p, g, params) - expected).norm(), 1e-9);
  }
}

TEST(SkinNormal, RotationAndTranslationBehavior) {
  const auto g = graph_of({{0, 0, 0}}, 1);
  auto params = WarpParams::identity(1);
  const Vec3 n = Vec3::UnitX();
  EXPECT_TRUE(skin_normal(n, Vec3(0.1, 0, 0), g, params).isApprox(n));
  params.nodes[0].b = Vec3(0.3, -0.2, 0.1);
  EXPECT_TRUE(skin_normal(n, Vec3(0.1, 0, 0), g, params).isApprox(n));
  params.nodes[0].q = axis_angle_quaternion(Vec3::UnitZ(), std::numbers::pi / 2);
  EXPECT_TRUE(skin_normal(n, Vec3(0.1, 0, 0), g, params).isApprox(Vec3::UnitY(), 1e-12));
}

TEST(SkinNormal, RenormalizedAndDegenerateBlendRejected) {
  std::mt19937 rng(31);
  const auto g = graph_of(random_points(rng, 6, -0.05, 0.05), 4);
  auto params = WarpParams::identity(g.size());
  for (auto& np : params.nodes) np.q = random_quaternion_near_identity(rng, 0.5);
  for (int t = 0; t < 20; ++t) {
    const Vec3 n = random_vec(rng, -1, 1).normalized();
    EXPECT_NEAR(skin_normal(n, random_vec(rng, -0.05, 0.05), g, params).norm(), 1.0, 1e-12);
  }
  // Two equally weighted nodes with opposite half-turns cancel the normal.
  const auto pair = graph_of({{-1, 0, 0}, {1, 0, 0}}, 2);
  auto opposite = WarpParams::identity(2);
  opposite.nodes[1].q = axis_angle_quaternion(Vec3::UnitZ(), std::numbers::pi);
  EXPECT_THROW(skin_normal(Vec3::UnitX(), Vec3::Zero(), pair, opposite), NumericError);
}

TEST(WarpParams, FlattenLayoutAndRoundTrip) {
  auto p = WarpParams::identity(3);
  p.nodes[1].b = Vec3(1, 2, 3);
  p.global.q = Vec4(0.5, 0.1, 0.2, 0.3);
  const auto x = p.flatten();
  EXPECT_EQ(x.size(), 7 * (3 + 1));
  EXPECT_EQ(x(7 + 4), 1.0);
  EXPECT_EQ(x(21), 0.5);
  EXPECT_EQ(WarpParams::unflatten(x).flatten(), x);
}

namespace {

CameraIntrinsics integer_center_camera() {
  CameraIntrinsics c;
  c.fx = c.fy = 10;
  c.cx = 20;
  c.cy = 15;
  c.width = 40;
  c.height = 30;
  return c;
}

}  // namespace

TEST(SurfelsFromDepth, PinholeBackProjection) {
  const auto intr = integer_center_camera();
  DepthFrame f = edtrack::testing::plane_frame(intr, 1.0);
  const auto cloud = surfels_from_depth(f, intr);
  ASSERT_EQ(cloud.size(), std::size_t(intr.width * intr.height));
  const auto at = [&](int u, int v) { return cloud.surfels[std::size_t(v * intr.width + u)]; };
  EXPECT_TRUE(at(20, 15).position.isApprox(Vec3(0, 0, 1)));
  EXPECT_TRUE(at(30, 15).position.isApprox(Vec3(1, 0, 1)));
  EXPECT_EQ(at(3, 4).timestamp, 0);
  EXPECT_EQ(at(3, 4).confidence, 1.0);
}

TEST(SurfelsFromDepth, InvalidDepthAndMaskSkipped) {
  const auto intr = integer_center_camera();
  DepthFrame f = edtrack::testing::plane_frame(intr, 1.0, 0.0, 7);
  f.depth(5, 5) = 0.0;
  f.tissue_mask(6, 6) = 0;
  const auto cloud = surfels_from_depth(f, intr);
  EXPECT_EQ(cloud.size(), std::size_t(intr.width * intr.height - 2));
  EXPECT_EQ(cloud.frame_id, 7);
  for (const auto& s : cloud.surfels) {
    EXPECT_FALSE(s.position.isApprox(back_project(5, 5, 1.0, intr)));
    EXPECT_EQ(s.timestamp, 7);
  }
  DepthFrame empty = f;
  std::fill(empty.tissue_mask.data.begin(), empty.tissue_mask.data.end(), 0);
  EXPECT_TRUE(surfels_from_depth(empty, intr).empty());
}

TEST(SurfelsFromDepth, RadiusFollowsFootprintAndClamps) {
  const auto intr = integer_center_camera();
  const double footprint = 1.0 / intr.focal_mean();
  EXPECT_NEAR(surfel_radius(1.0, Vec3(0, 0, -1), intr), footprint / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(surfel_radius(1.0, Vec3(1, 0, -1e-3).normalized(), intr), 4 * footprint, 1e-15);
  EXPECT_THROW(surfels_from_depth(DepthFrame{}, intr), ConfigError);
}

TEST(NormalsFromDepth, FrontoParallelPlane) {
  const auto intr = edtrack::testing::small_camera();
  const auto normals = normals_from_depth(edtrack::testing::plane_frame(intr, 0.5), intr);
  for (int v = 1; v < intr.height - 1; ++v)
    for (int u = 1; u < intr.width - 1; ++u) EXPECT_LT((normals(u, v) - Vec3(0, 0, -1)).norm(), 1e-12);
}

TEST(NormalsFromDepth, SlantedPlaneMatchesAnalyticNormal) {
  const auto intr = edtrack::testing::small_camera();
  const double slope = 0.4;  // z = 0.5 + 0.4 x
  const auto normals = normals_from_depth(edtrack::testing::plane_frame(intr, 0.5, slope), intr);
  const Vec3 expected = Vec3(slope, 0, -1).normalized();
  for (int v = 0; v < intr.height; ++v)
    for (int u = 0; u < intr.width; ++u) EXPECT_LT((normals(u, v) - expected).norm(), 1e-9) << u << "," << v;
}

TEST(NormalsFromDepth, IsolatedPixelInvalid) {
  const auto intr = edtrack::testing::small_camera();
  DepthFrame f;
  f.depth = DepthMap(intr.width, intr.height, 0.0);
  f.tissue_mask = MaskMap(intr.width, intr.height, 1);
  f.depth(10, 10) = 0.5;
  EXPECT_TRUE(normals_from_depth(f, intr)(10, 10).isZero());
  EXPECT_TRUE(surfels_from_depth(f, intr).empty());
}

TEST(BuildEdGraph, SingleVoxel) {
  std::vector<Vec3> pts = {{0.001, 0.001, 0.001}, {0.002, 0.003, 0.004}, {0.005, 0.005, 0.005}};
  const auto g = build_ed_graph(pts, {.node_spacing = 0.01, .k_neighbors = 4, .k_edges = 8});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_TRUE(g.edges.empty());
  EXPECT_EQ(g.k_neighbors, 1);
  EXPECT_TRUE(g.nodes[0].isApprox(Vec3(0.008, 0.009, 0.010) / 3));
}

TEST(BuildEdGraph, DistantClustersAreBridged) {
  std::mt19937 rng(4);
  auto pts = random_points(rng, 50, 0.0, 0.02);
  for (const auto& p : random_points(rng, 50, 0.0, 0.02)) pts.push_back(p + Vec3(0.5, 0, 0));
  const auto g = build_ed_graph(pts, {.node_spacing = 0.01, .k_neighbors = 4, .k_edges = 2});
  EXPECT_GE(g.size(), 2u);
  EXPECT_TRUE(connected(g));
  EXPECT_NO_THROW(g.validate());
}

TEST(BuildEdGraph, UniformGridNodeCountMatchesOccupiedVoxels) {
  const double s = 0.005;
  const int n = 9;  // points per axis, offset by s/2 from voxel faces
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pts.emplace_back(s * (i + 0.5), s * (j + 0.5), 0.0025);
  const auto g = build_ed_graph(pts, {.node_spacing = 2 * s, .k_neighbors = 4, .k_edges = 4});
  // Oracle: with 2s voxels each holds two grid columns, so ceil(n / 2) per axis.
  const std::size_t per_axis = (n + 1) / 2;
  EXPECT_EQ(g.size(), per_axis * per_axis);
  EXPECT_TRUE(connected(g));
}

TEST(BuildEdGraph, EdgesValidAndErrors) {
  std::mt19937 rng(9);
  const auto pts = random_points(rng, 400, -0.05, 0.05);
  const auto g = build_ed_graph(pts, {.node_spacing = 0.02, .k_neighbors = 4, .k_edges = 6});
  EXPECT_NO_THROW(g.validate());
  for (auto [a, b] : g.edges) EXPECT_LT(a, b);
  EXPECT_TRUE(connected(g));
  EXPECT_THROW(build_ed_graph(pts, {.node_spacing = 0.0}), ConfigError);
  EXPECT_THROW(build_ed_graph(std::vector<Vec3>{}, {}), ConfigError);
}

TEST(GrowEdGraph, AddsOnlyDistantCandidates) {
  std::vector<Vec3> pts = {{0, 0, 0}, {0.02, 0, 0}};
  auto g = build_ed_graph(pts, {.node_spacing = 0.01, .k_neighbors = 4, .k_edges = 4});
  ASSERT_EQ(g.size(), 2u);
  std::vector<Vec3> cand = {{0.021, 0, 0}, {0.1, 0, 0}, {0.105, 0, 0}};
  EXPECT_EQ(grow_ed_graph(g, cand, {.node_spacing = 0.01, .k_neighbors = 4, .k_edges = 4}), 1);
  EXPECT_EQ(g.size(), 3u);
  EXPECT_TRUE(connected(g));
  EXPECT_EQ(g.k_neighbors, 3);
}
