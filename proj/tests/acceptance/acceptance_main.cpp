// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. argv[1] is the path of the edtrack executable.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "edtrack/pipeline/synthetic.hpp"
#include "edtrack/pipeline/tracking.hpp"
#include "edtrack/solver.hpp"
#include "instances.hpp"
#include "mesh_fixtures.hpp"

using namespace edtrack;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (s >= limit_s) {
    o.pass = false;
    o.detail += fmt("; over the %.0f s limit", limit_s);
  }
  std::printf("%s  %d %-28s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s);
  std::fflush(stdout);
  failures += !o.pass;
}

CorrespondenceSet targets_of(std::span<const Vec3> t) {
  CorrespondenceSet c;
  c.mode = CostMode::Correspondence;
  for (const auto& p : t) c.entries.push_back({true, p, Vec3::Zero()});
  return c;
}

double rmse(std::span<const Vec3> a, std::span<const Vec3> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]).squaredNorm();
  return std::sqrt(s / double(a.size()));
}

Outcome gradients() {
  std::mt19937 rng(101);
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    const auto mode = k % 2 ? CostMode::Correspondence : CostMode::Icp;
    const auto inst = edtrack::testing::random_instance(rng, mode, 5, 50);
    const auto fd = finite_diff_gradient(inst.state, inst.corr, inst.weights, 1e-5);
    const auto an = gradient(inst.state, inst.corr, inst.weights, GradientMode::Analytic);
    worst = std::max(worst, edtrack::testing::relative_inf_error(an, fd));
  }
  return {worst < 1e-4, fmt("20 instances, worst relative inf-norm error %.2e (limit 1e-4)", worst)};
}

Outcome rigid_recovery() {
  std::mt19937 rng(102);
  auto pts = edtrack::testing::random_points(rng, 1000, -0.05, 0.05);
  for (auto& p : pts) p.z() += 0.5;
  const auto g = build_ed_graph(pts, {.node_spacing = 0.04});
  const RigidTransform motion = quat_transform(
      axis_angle_quaternion(Vec3(1, -2, 0.5).normalized(), 10.0 * std::numbers::pi / 180), {0.02, -0.01, 0.01});
  std::vector<Vec3> targets;
  for (const auto& p : pts) targets.push_back(motion.apply_point(p));
  const auto s = SolveState::make(g, pts, std::vector<Vec3>(pts.size(), Vec3(0, 0, -1)));
  const CostWeights w{.lambda_c = 1.0, .mode = CostMode::Correspondence};
  const auto r = optimize(s, DataProvider::fixed(targets_of(targets)), w, {.step_size = 8e-3, .max_iterations = 500});
  auto out = s;
  out.params = r.final_params;
  const double e = rmse(out.warped_positions(), targets);
  return {e < 1e-3, fmt("RMSE %.2e m after %d iterations (%s)", e, r.iterations_used, r.stop_reason.c_str())};
}

Outcome nonrigid_recovery() {
  std::mt19937 rng(103);
  EDGraph g;
  g.nodes = {Vec3(-0.03, 0, 0.5), Vec3(0.03, 0, 0.5)};
  g.edges = {{0, 1}};
  g.k_neighbors = 2;
  auto pts = edtrack::testing::random_points(rng, 200, -0.05, 0.05);
  for (auto& p : pts) p.z() += 0.5;
  WarpParams truth = WarpParams::identity(2);
  truth.nodes[0].q = axis_angle_quaternion(Vec3(0, 0, 1), 4.0 * std::numbers::pi / 180);
  truth.nodes[0].b = Vec3(0.004, -0.002, 0.003);
  truth.nodes[1].q = axis_angle_quaternion(Vec3(1, 0, 0), -3.0 * std::numbers::pi / 180);
  truth.nodes[1].b = Vec3(-0.003, 0.005, 0.001);
  auto gen = SolveState::make(g, pts, std::vector<Vec3>(pts.size(), Vec3(0, 0, -1)));
  gen.params = truth;
  const auto targets = gen.warped_positions();

  const auto s = SolveState::make(g, pts, std::vector<Vec3>(pts.size(), Vec3(0, 0, -1)));
  const CostWeights w{.lambda_c = 1.0, .mode = CostMode::Correspondence};
  const auto r = optimize(s, DataProvider::fixed(targets_of(targets)), w, {.step_size = 2e-3, .max_iterations = 500});
  auto out = s;
  out.params = r.final_params;
  const auto warped = out.warped_positions();
  double worst = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) worst = std::max(worst, (warped[i] - targets[i]).norm());
  return {worst < 1e-3, fmt("max surfel error %.2e m after %d iterations", worst, r.iterations_used)};
}

Outcome directional(const fs::path& dir) {
  const auto seq = make_synthetic_sequence();  // left edge pulled 5 cm, node spacing 1 cm
  write_synthetic_sequence(seq, dir);
  double final_mean[2] = {0, 0};
  int idx = 0;
  for (const char* mode : {"icp", "correspondence"}) {
    auto cfg = load_sequence_config((dir / (std::string("config_") + mode + ".json")).string());
    cfg.write_clouds = false;
    const auto m = run_tracking(cfg);
    const auto f = m.final_mean();
    if (!f) return {false, std::string(mode) + " produced no valid landmarks"};
    final_mean[idx++] = *f;
  }
  return {final_mean[1] < final_mean[0],
          fmt("final mean error: correspondence %.2f px, ICP %.2f px", final_mean[1], final_mean[0])};
}

Outcome pbd_constraints() {
  // Two particles, 50 passes.
  Vec3 a(0, 0, 0), b(0.3, 0.4, 1.2);
  for (int pass = 0; pass < 50; ++pass) {
    const auto c = project_distance(a, b, 1, 2, 0.5, 0.5);
    a += c.dp_i;
    b += c.dp_j;
  }
  const double dist_res = std::abs((a - b).norm() - 0.5);

  // Rigidly rotated cluster.
  const std::vector<Vec3> rest = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.4, 0.3, 0.2}};
  const Mat3 rot = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  std::vector<Vec3> moved;
  for (const auto& x : rest) moved.push_back(rot * x + Vec3(0.2, -0.1, 0.3));
  double shape = 0;
  for (const auto& d : project_shape_matching(moved, rest, std::vector<double>(rest.size(), 1.0), 1.0).dp)
    shape = std::max(shape, d.norm());

  // Scaled tetrahedron.
  const std::vector<Vec3> tet = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const std::vector<Triangle> faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  const double v0 = signed_volume(tet, faces);
  std::vector<Vec3> p;
  for (const auto& x : tet) p.push_back(1.3 * x);
  double prev = std::abs(signed_volume(p, faces) - v0);
  bool monotone = true;
  for (int pass = 0; pass < 20; ++pass) {
    const auto c = project_volume(p, std::vector<double>(4, 1.0), faces, v0, 1.0);
    for (std::size_t i = 0; i < 4; ++i) p[i] += c.dp[i];
    const double r = std::abs(signed_volume(p, faces) - v0);
    monotone = monotone && r <= prev;
    prev = r;
  }
  return {dist_res < 1e-6 && shape < 1e-9 && monotone,
          fmt("distance residual %.1e, shape correction %.1e, volume %s", dist_res, shape,
              monotone ? "monotone" : "NOT monotone")};
}

Outcome transport_round_trip() {
  const auto d = edtrack::testing::simulated_sheet(26, 11, {0.15, 0.06}, {0.03, 0.01, -0.02}, 15);
  if (d.map.mesh_a.triangles.size() != 500) return {false, "fixture is not 500 triangles"};
  double trip = 0;
  for (const auto& sp : edtrack::testing::grid_samples(d, 2)) {
    const SurfacePoint on_b{sp.triangle_id, sp.barycentric, transport(sp, d.map, TransportDirection::AtoB)};
    trip = std::max(trip, (transport(on_b, d.map, TransportDirection::BtoA) - sp.world_position).norm());
  }
  std::mt19937 rng(106);
  double oracle = 0;
  for (auto p : edtrack::testing::random_points(rng, 200, -0.08, 0.08)) {
    p.z() += 0.5;
    const auto sp = nearest_surface_point(p, d.map.mesh_b);
    oracle = std::max(oracle, std::abs((sp.world_position - p).norm() - edtrack::testing::oracle_mesh_distance(p, d.map.mesh_b)));
  }
  return {trip < 1e-6 && oracle < 1e-12, fmt("round trip %.1e m, oracle gap %.1e m", trip, oracle)};
}

Outcome pair_fidelity() {
  const auto d = edtrack::testing::simulated_sheet(11, 11, {0.1, 0.1}, {0.03, 0.01, -0.02}, 15);
  const auto noisy = edtrack::testing::permuted_pair(d, 3, 0.1, 107);
  const double rec = edtrack::testing::pair_recovery(synthesize_pairs(noisy.cloud_a, noisy.cloud_b, d.map), noisy.perm);
  const auto exact = edtrack::testing::permuted_pair(d, 3, 0.0, 107);
  const auto pairs = synthesize_pairs(exact.cloud_a, exact.cloud_b, d.map);
  const double rec0 = edtrack::testing::pair_recovery(pairs, exact.perm);
  double res = 0;
  for (double r : pairs.residuals) res = std::max(res, r);
  return {rec >= 0.99 && rec0 == 1.0 && res < 1e-12,
          fmt("noisy %.2f%%, exact %.2f%% with max residual %.1e", 100 * rec, 100 * rec0, res)};
}

Outcome metric_fixture() {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 100;
  intr.cx = 50;
  intr.cy = 40;
  intr.width = 100;
  intr.height = 80;
  // One surfel on the optical axis projects to (50, 40).
  const std::vector<Vec3> pts = {Vec3(0, 0, 1)};
  AnnotationSet a;
  a.tracks[0][0] = {52, 40};
  a.tracks[1][0] = {50, 44};
  a.bound_surfel = {{0, 0}, {1, 0}};
  TrackingMetrics m;
  m.frames.push_back(reprojection_error(pts, a, intr, 0));
  const auto s = m.frames[0].stats();
  const std::string summary = summary_json(m)["summary"];
  return {s.mean == 3.0 && s.stddev == 1.0 && summary == "3.0(1.0)",
          fmt("errors {2,4}: mean %.17g, std %.17g, summary \"%s\"", s.mean, s.stddev, summary.c_str())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("missing " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& cli, const fs::path& dir) {
  if (cli.empty()) return {false, "no CLI path given"};
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null";
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("command failed: " + cmd);
  };
  run("make-demo --frames 6 --out \"" + dir.string() + "\"");
  for (const char* out : {"run_a", "run_b"}) {
    auto j = nlohmann::json::parse(slurp(dir / "config_icp.json"));
    j["output_dir"] = out;
    std::ofstream(dir / (std::string(out) + ".json")) << j.dump(1);
    run("track \"" + (dir / (std::string(out) + ".json")).string() + "\"");
  }
  bool same = true;
  std::size_t bytes = 0;
  for (const char* f : {"frames.csv", "landmarks.csv"}) {
    const auto a = slurp(dir / "run_a" / f), b = slurp(dir / "run_b" / f);
    same = same && a == b && !a.empty();
    bytes += a.size();
  }
  return {same, fmt("metric CSVs %s (%zu bytes)", same ? "byte-identical" : "differ", bytes)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  const fs::path scratch = fs::temp_directory_path() / "edtrack_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  criterion(1, "gradient correctness", 10, gradients);
  criterion(2, "rigid recovery", 5, rigid_recovery);
  criterion(3, "non-rigid recovery", 5, nonrigid_recovery);
  criterion(4, "correspondence beats ICP", 60, [&] { return directional(scratch / "directional"); });
  criterion(5, "PBD constraints", 1, pbd_constraints);
  criterion(6, "transport round trip", 5, transport_round_trip);
  criterion(7, "pair synthesis fidelity", 5, pair_fidelity);
  criterion(8, "metric correctness", 1, metric_fixture);
  criterion(9, "determinism", 60, [&] { return determinism(cli, scratch / "determinism"); });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
