#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "edtrack/pipeline/synthetic.hpp"
#include "edtrack/pipeline/tracking.hpp"
#include "test_support.hpp"

using namespace edtrack;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("edtrack_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SequenceConfig demo_config(const fs::path& dir, const std::string& mode) {
  auto cfg = load_sequence_config((dir / ("config_" + mode + ".json")).string());
  cfg.write_clouds = false;
  return cfg;
}

}  // namespace

TEST(SequenceConfig, PatternsResolveAgainstConfigDirectory) {
  const auto dir = scratch("config");
  const nlohmann::json j{{"intrinsics", "cam.json"},   {"frame_count", 3},
                         {"depth_pattern", "d%02d.png"}, {"mask_pattern", "m%02d.png"},
                         {"matches_pattern", "x%d.txt"}, {"mode", "correspondence"},
                         {"weights", {{"lambda_c", 0.5}}}, {"graph", {{"node_spacing", 0.02}}}};
  const auto cfg = sequence_config_from_json(j, dir);
  ASSERT_EQ(cfg.frames.size(), 3u);
  EXPECT_EQ(cfg.frames[2].depth, (dir / "d02.png").string());
  EXPECT_TRUE(cfg.frames[0].matches.empty());
  EXPECT_EQ(cfg.frames[1].matches, (dir / "x1.txt").string());
  EXPECT_EQ(cfg.mode, CostMode::Correspondence);
  EXPECT_EQ(cfg.weights.mode, CostMode::Correspondence);
  EXPECT_EQ(cfg.weights.lambda_c, 0.5);
  EXPECT_EQ(cfg.weights.lambda_r, 10.0);
  EXPECT_DOUBLE_EQ(cfg.association.match_radius, 0.1);
  EXPECT_THROW(cfg.validate(), ConfigError);  // files do not exist
  EXPECT_THROW(sequence_config_from_json({{"frame_count", 1}}, dir), ConfigError);
}

TEST(SequenceConfig, MissingMatchFileFailsBeforeTracking) {
  const auto dir = scratch("missing_matches");
  SyntheticOptions opt;
  opt.frames = 3;
  write_synthetic_sequence(make_synthetic_sequence(opt), dir);
  fs::remove(dir / "matches_0002.txt");
  auto cfg = demo_config(dir, "correspondence");
  try {
    run_tracking(cfg);
    FAIL() << "expected a configuration error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 2"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(cfg.output_dir));
}

TEST(FuseFrame, AgreementKeepsPositionsAndRaisesConfidence) {
  const auto intr = edtrack::testing::small_camera();
  const auto frame = edtrack::testing::plane_frame(intr, 0.4, 0.3);
  const auto normals = normals_from_depth(frame, intr);
  const auto cloud = surfels_from_depth(frame, normals, intr);
  const auto r = fuse_frame(cloud, frame, normals, intr);
  ASSERT_EQ(r.cloud.size(), cloud.size());
  EXPECT_EQ(r.spawned, 0);
  EXPECT_GT(r.merged, int(0.9 * cloud.size()));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_LT((r.cloud.surfels[i].position - cloud.surfels[i].position).norm(), 1e-12);
    EXPECT_GE(r.cloud.surfels[i].confidence, cloud.surfels[i].confidence);
  }
  int raised = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) raised += r.cloud.surfels[i].confidence == 2.0;
  EXPECT_EQ(raised, r.merged);
}

TEST(FuseFrame, UnseenRegionGrowsAndMaskedOutSurfelsStay) {
  const auto intr = edtrack::testing::small_camera();
  auto left = edtrack::testing::plane_frame(intr, 0.4);
  for (int v = 0; v < intr.height; ++v)
    for (int u = intr.width / 2; u < intr.width; ++u) left.tissue_mask(u, v) = 0;
  const auto normals = normals_from_depth(left, intr);
  const auto cloud = surfels_from_depth(left, normals, intr);

  const auto full = edtrack::testing::plane_frame(intr, 0.4, 0.0, 1);
  const auto grown = fuse_frame(cloud, full, normals_from_depth(full, intr), intr);
  EXPECT_GT(grown.cloud.size(), cloud.size());
  EXPECT_EQ(grown.spawned, int(grown.cloud.size() - cloud.size()));
  EXPECT_EQ(grown.new_positions.size(), std::size_t(grown.spawned));
  // Each pixel is covered once, so nothing is duplicated over the seen half.
  EXPECT_EQ(grown.cloud.size(), std::size_t(intr.width * intr.height));

  // Now hide the left half: its surfels must come through unchanged.
  auto right = full;
  for (int v = 0; v < intr.height; ++v)
    for (int u = 0; u < intr.width / 2; ++u) right.tissue_mask(u, v) = 0;
  const auto kept = fuse_frame(grown.cloud, right, normals_from_depth(right, intr), intr);
  ASSERT_EQ(kept.cloud.size(), grown.cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& a = grown.cloud.surfels[i];
    const auto& b = kept.cloud.surfels[i];
    if (a.position.x() < -0.02) {  // well inside the hidden half
      EXPECT_EQ(a.position, b.position);
      EXPECT_EQ(a.confidence, b.confidence);
      EXPECT_EQ(a.timestamp, b.timestamp);
    }
  }
}

TEST(ReprojectionError, ClosedFormCases) {
  const auto intr = edtrack::testing::small_camera();
  const Vec3 p = back_project(10, 20, 0.5, intr);
  AnnotationSet a;
  a.tracks[7][0] = {10, 20};
  a.tracks[8][0] = {13, 24};
  a.bound_surfel = {{7, 0}, {8, 0}};
  auto m = reprojection_error(std::vector<Vec3>{p}, a, intr, 0);
  ASSERT_EQ(m.landmarks.size(), 2u);
  EXPECT_NEAR(m.landmarks[0].error_px, 0.0, 1e-12);
  EXPECT_NEAR(m.landmarks[1].error_px, 5.0, 1e-12);

  // Errors {2, 4}: mean 3, population std 1.
  a.tracks[7][0] = {12, 20};
  a.tracks[8][0] = {10, 16};
  m = reprojection_error(std::vector<Vec3>{p}, a, intr, 0);
  const auto s = m.stats();
  EXPECT_NEAR(s.mean, 3.0, 1e-12);
  EXPECT_NEAR(s.stddev, 1.0, 1e-12);
  EXPECT_EQ(format_mean_std(s.mean, s.stddev), "3.0(1.0)");

  // Behind the camera: invalid, excluded from the statistics.
  m = reprojection_error(std::vector<Vec3>{Vec3(0, 0, -1)}, a, intr, 0);
  EXPECT_FALSE(m.landmarks[0].valid());
  EXPECT_EQ(m.stats().count, 0);
  EXPECT_EQ(m.validity_fraction(), 0.0);
  // A frame without annotations has no landmarks.
  EXPECT_TRUE(reprojection_error(std::vector<Vec3>{p}, a, intr, 3).landmarks.empty());
}

TEST(BindLandmarks, NearestAtFirstFrameTiesToLowerIndexNeverRebinds) {
  const auto intr = edtrack::testing::small_camera();
  AnnotationSet a;
  a.tracks[0][2] = {10, 10};
  a.tracks[0][3] = {30, 30};
  a.tracks[1][3] = {40, 10};
  // Surfels 1 and 2 project equally far from landmark 0.
  std::vector<Vec3> pts = {back_project(20, 20, 0.5, intr), back_project(9, 10, 0.5, intr),
                           back_project(11, 10, 0.5, intr), back_project(40, 10, 0.5, intr)};
  bind_landmarks(a, pts, intr, 1);
  EXPECT_TRUE(a.bound_surfel.empty());
  bind_landmarks(a, pts, intr, 2);
  EXPECT_EQ(a.bound_surfel.at(0), 1);
  EXPECT_FALSE(a.bound_surfel.count(1));
  pts[0] = back_project(30, 30, 0.5, intr);  // surfel 0 now sits on landmark 0's next annotation
  bind_landmarks(a, pts, intr, 3);
  EXPECT_EQ(a.bound_surfel.at(0), 1);
  EXPECT_EQ(a.bound_surfel.at(1), 3);
  EXPECT_EQ(a.bound_frame.at(1), 3);
}

TEST(Annotations, CsvRoundTripAndErrors) {
  std::istringstream in("landmark_id,frame,u,v\n3,0,1.5,2.5\n3,2,4,5\r\n1,1,0,0\n");
  const auto a = load_annotations(in);
  ASSERT_EQ(a.tracks.size(), 2u);
  EXPECT_EQ(a.at(3, 2), Vec2(4, 5));
  EXPECT_FALSE(a.at(3, 1));
  EXPECT_EQ(a.first_frame(3), 0);
  std::istringstream bad("landmark_id,frame,u,v\n1,0,x,2\n");
  EXPECT_THROW(load_annotations(bad), IoError);
  std::istringstream dup("1,0,1,2\n1,0,3,4\n");
  EXPECT_THROW(load_annotations(dup), IoError);
  AnnotationSet out;
  out.tracks[0][0] = {100, 1};
  EXPECT_THROW(out.validate(edtrack::testing::small_camera()), ConfigError);
}

TEST(Report, SingleFrameOneRowAndEmptyFails) {
  TrackingMetrics m;
  m.mode = "icp";
  FrameMetrics f;
  f.frame = 0;
  for (double e : {2.0, 4.0}) {
    LandmarkError l;
    l.landmark = int(f.landmarks.size());
    l.projected = Vec2(e, 0);
    l.error_px = e;
    f.landmarks.push_back(l);
  }
  m.frames.push_back(f);
  std::ostringstream csv;
  write_frame_csv(m, csv);
  EXPECT_EQ(csv.str(), "frame,mean_px,std_px,validity_fraction\n0,3.000000,1.000000,1.000000\n");
  EXPECT_EQ(summary_json(m)["summary"], "3.0(1.0)");

  const auto dir = scratch("report");
  emit_report(m, dir);
  for (const char* f : {"frames.csv", "landmarks.csv", "summary.json", "error_plot.svg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  save_metrics(m, dir / "metrics.json");
  const auto back = load_metrics((dir / "metrics.json").string());
  EXPECT_EQ(back.pooled().mean, 3.0);
  EXPECT_THROW(emit_report(TrackingMetrics{}, dir), InvalidParameterError);
}

TEST(RunTracking, StaticSequenceStaysWithinDiscretization) {
  const auto dir = scratch("static");
  SyntheticOptions opt;
  opt.frames = 4;
  opt.pull = opt.shear = Vec3::Zero();
  write_synthetic_sequence(make_synthetic_sequence(opt), dir);
  for (const std::string mode : {"icp", "correspondence"}) {
    const auto m = run_tracking(demo_config(dir, mode));
    ASSERT_EQ(m.frames.size(), 4u);
    // Binding picks the nearest pixel-centred surfel: at most half a pixel
    // diagonal away, and nothing moves afterwards.
    for (const auto& f : m.frames) {
      EXPECT_FALSE(f.failed);
      ASSERT_FALSE(f.landmarks.empty());
      for (const auto& l : f.landmarks) {
        ASSERT_TRUE(l.valid());
        EXPECT_LE(l.error_px, std::sqrt(0.5) + 1e-3) << mode << " frame " << f.frame;
      }
    }
  }
}

TEST(RunTracking, GlobalTranslationWithMatchesUnderOnePixel) {
  const auto dir = scratch("translation");
  SyntheticOptions opt;
  opt.frames = 8;
  opt.pull = Vec3(0.02, 0.01, 0);
  opt.shear = Vec3::Zero();
  write_synthetic_sequence(make_synthetic_sequence(opt), dir);
  const auto m = run_tracking(demo_config(dir, "correspondence"));
  for (const auto& f : m.frames) {
    const auto s = f.stats();
    ASSERT_GT(s.count, 0);
    EXPECT_LT(s.mean, 1.0) << "frame " << f.frame;
  }
}

TEST(RunTracking, DeterministicOutputsAndEvalAgrees) {
  const auto dir = scratch("determinism");
  SyntheticOptions opt;
  opt.frames = 4;
  write_synthetic_sequence(make_synthetic_sequence(opt), dir);
  auto cfg = load_sequence_config((dir / "config_icp.json").string());
  std::vector<std::string> runs;
  TrackingMetrics first;
  for (int r = 0; r < 2; ++r) {
    cfg.output_dir = (dir / ("run" + std::to_string(r))).string();
    first = run_tracking(cfg);
    runs.push_back(slurp(fs::path(cfg.output_dir) / "frames.csv") + slurp(fs::path(cfg.output_dir) / "landmarks.csv"));
  }
  EXPECT_EQ(runs[0], runs[1]);
  EXPECT_GT(runs[0].size(), 100u);

  const auto again = evaluate_tracked(cfg.output_dir, load_annotations((dir / "annotations.csv").string()));
  ASSERT_EQ(again.frames.size(), first.frames.size());
  for (std::size_t k = 0; k < again.frames.size(); ++k)
    EXPECT_EQ(again.frames[k].stats().mean, first.frames[k].stats().mean);
}

TEST(RunTracking, IterationEventsAreLogged) {
  const auto dir = scratch("events");
  SyntheticOptions opt;
  opt.frames = 2;
  write_synthetic_sequence(make_synthetic_sequence(opt), dir);
  int iterations = 0, frames = 0;
  TrackingOptions topt;
  topt.write_outputs = false;
  topt.log = [&](const nlohmann::json& e) {
    iterations += e["event"] == "iteration";
    frames += e["event"] == "frame";
  };
  run_tracking(demo_config(dir, "correspondence"), topt);
  EXPECT_EQ(frames, 2);
  EXPECT_GT(iterations, 0);
}
