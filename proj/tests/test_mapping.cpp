#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "hybridcal/mapping.hpp"
#include "hybridcal/simulate.hpp"
#include "test_util.hpp"

using namespace hycal;
using namespace hycal::test;

namespace {

// LiDAR looking along world +x.
Eigen::Quaterniond forward_rotation() {
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);
  return Eigen::Quaterniond(R);
}

ScanPattern pattern(double duration) {
  ScanPattern p;
  p.duration = duration;
  return p;
}

double max_nn_distance(const ReflectivityCloud& from, const ReflectivityCloud& to) {
  const KdTree tree(to.points);
  double worst = 0;
  for (const Vec3& p : from.points) worst = std::max(worst, tree.nearest_k(p, 1)[0].distance);
  return worst;
}

std::vector<std::array<double, 3>> sorted_points(const ReflectivityCloud& c) {
  std::vector<std::array<double, 3>> out;
  for (const Vec3& p : c.points) out.push_back({p.x(), p.y(), p.z()});
  std::sort(out.begin(), out.end());
  return out;
}

struct RoomTarget {
  ReflectivityCloud cloud;
  static const RoomTarget& get() {
    static const RoomTarget t;
    return t;
  }

 private:
  RoomTarget() : cloud(simulate_lidar(Scene{}, pattern(0.5), Pose::identity(), {}, 1)) {}
};

// Four odometry scans at 5 cm noise plus one stationary fine scan at 2 cm.
struct StitchScene {
  Scene scene;
  ReflectivityCloud coarse, fine, fine_b;
  Pose fine_pose, init;
  static const StitchScene& get() {
    static const StitchScene s;
    return s;
  }

 private:
  StitchScene() {
    const Eigen::Quaterniond fwd = forward_rotation();
    std::vector<ReflectivityCloud> scans;
    std::vector<PoseRecord> poses;
    for (int i = 0; i < 4; ++i) {
      const Pose P(Eigen::Quaterniond(Eigen::AngleAxisd(i * kPi / 2, Vec3::UnitZ())) * fwd,
                   Vec3(0.2 * i - 0.3, 0.1, 0.0));
      scans.push_back(simulate_lidar(scene, pattern(1.0), P, {0.05, 0.02}, 10 + i));
      poses.push_back({static_cast<double>(i), P});
    }
    coarse = assemble_coarse_map(scans, poses, 0.05);
    fine_pose = Pose(fwd, Vec3(1.5, 0.0, 0.0));
    fine = simulate_lidar(scene, pattern(1.0), fine_pose, {0.02, 0.02}, 99);
    fine_b = simulate_lidar(scene, pattern(1.0), fine_pose, {0.02, 0.02}, 100);
    init = fine_pose * Pose(Eigen::Quaterniond(Eigen::AngleAxisd(deg2rad(0.5), Vec3(0, 1, 1).normalized())),
                            Vec3(0.02, -0.01, 0.01));
  }
};

// Room plus an interior box between the camera and the +x wall, and a second
// cloud captured from a vantage that sees behind the box.
struct OcclusionScene {
  SimConfig cfg;
  SimOutput sim;
  ReflectivityCloud world;
  static const OcclusionScene& get() {
    static const OcclusionScene s;
    return s;
  }

 private:
  static SimConfig config() {
    SimConfig c;
    c.noise = {0, 0};
    c.scan.duration = 5.0;
    InteriorBox b;
    b.min = Vec3(1.5, -0.6, -0.4);
    b.max = Vec3(2.0, 0.0, 0.4);
    b.albedo = 0.5;
    c.scene.boxes.push_back(b);
    return c;
  }
  OcclusionScene() : cfg(config()), sim(simulate(cfg)) {
    const Pose T2(default_camera_pose().rotation, Vec3(0.4, -1.5, 0.2));
    world = transform_cloud(simulate_lidar(cfg.scene, cfg.scan, T2, {}, 3), T2);
    world.append(transform_cloud(sim.cloud, cfg.lidar_pose()));
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// ICP
// ---------------------------------------------------------------------------

TEST(Icp, ParamsValidation) {
  IcpParams p;
  p.decay = 0;
  EXPECT_THROW(p.validate(), InvalidStage);
  p.decay = 1.0;
  EXPECT_NO_THROW(p.validate());
  p.max_corr_dist = 0;
  EXPECT_THROW(p.validate(), InvalidStage);
}

TEST(Icp, SourceEqualsTarget) {
  const auto& target = RoomTarget::get().cloud;
  const StitchReport rep = icp_point_to_plane(target, target, Pose::identity(), IcpParams{});
  EXPECT_TRUE(rep.converged);
  EXPECT_LE(rep.iterations, 2);
  EXPECT_LT(rotation_angle(rep.pose.rotation), 1e-10);
  EXPECT_LT(rep.pose.translation.norm(), 1e-10);
}

TEST(Icp, RecoversTwoDegreesFiveCentimeters) {
  const auto& target = RoomTarget::get().cloud;
  const Pose T(Eigen::Quaterniond(Eigen::AngleAxisd(deg2rad(2), Vec3::UnitZ())), Vec3(0.05, 0, 0));
  const StitchReport rep = icp_point_to_plane(transform_cloud(target, T), target, Pose::identity(), IcpParams{});
  const Pose err = rep.pose * T;
  EXPECT_LE(rad2deg(trace_angle(err.R())), 0.05);
  EXPECT_LE(err.translation.norm(), 1e-3);
  EXPECT_LE(rep.iterations, 30);
  EXPECT_TRUE(rep.converged);
  ASSERT_EQ(rep.rms_history.size(), static_cast<std::size_t>(rep.iterations) + (rep.converged ? 1 : 0));
  for (std::size_t i = 1; i < rep.rms_history.size(); ++i) EXPECT_LE(rep.rms_history[i], rep.rms_history[i - 1]);
}

TEST(Icp, ResidualMonotoneFromRandomStarts) {
  const auto& target = RoomTarget::get().cloud;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Pose T = random_pose(rng, deg2rad(4), 0.08);
    const StitchReport rep = icp_point_to_plane(transform_cloud(target, T), target, Pose::identity(), IcpParams{});
    for (std::size_t i = 1; i < rep.rms_history.size(); ++i) EXPECT_LE(rep.rms_history[i], rep.rms_history[i - 1]);
    EXPECT_GT(rep.inlier_fraction, 0.0);
    EXPECT_LE(rep.inlier_fraction, 1.0);
  }
}

TEST(Icp, FarSourceHasNoCorrespondences) {
  const auto& target = RoomTarget::get().cloud;
  const Pose far = Pose::from_translation(Vec3(10.5, 0, 0));
  EXPECT_THROW(icp_point_to_plane(transform_cloud(target, far), target, Pose::identity(), IcpParams{}),
               NoCorrespondences);
}

TEST(Icp, SinglePlaneIsDegenerate) {
  ReflectivityCloud plane;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) plane.push_back(Vec3(0.05 * i, 0.05 * j, 1.0), 0.5, 0);
  EXPECT_THROW(icp_point_to_plane(plane, plane, Pose::identity(), IcpParams{}), DegenerateNormals);
}

TEST(Icp, Preconditions) {
  ReflectivityCloud small;
  for (int i = 0; i < 5; ++i) small.push_back(Vec3(i, 0, 1), 0.5, 0);
  EXPECT_THROW(icp_point_to_plane(small, small, Pose::identity(), IcpParams{}), TooFewPoints);
  EXPECT_THROW(icp_point_to_plane(ReflectivityCloud{}, RoomTarget::get().cloud, Pose::identity(), IcpParams{}),
               EmptyCloud);
}

// ---------------------------------------------------------------------------
// Coarse map assembly
// ---------------------------------------------------------------------------

TEST(Assemble, IdentitySmallVoxelIsSetEquality) {
  std::mt19937_64 rng(6);
  ReflectivityCloud scan;
  for (int i = 0; i < 500; ++i)
    scan.push_back(Vec3(i % 10, (i / 10) % 10, i / 100) * 0.1 + random_vec(rng, -0.01, 0.01), 0.5, 0);
  const ReflectivityCloud out = assemble_coarse_map({scan}, {{0.0, Pose::identity()}}, 1e-3);
  EXPECT_EQ(sorted_points(out), sorted_points(scan));
}

TEST(Assemble, IdenticalScansMerge) {
  const auto& scan = RoomTarget::get().cloud;
  const ReflectivityCloud out =
      assemble_coarse_map({scan, scan}, {{0.0, Pose::identity()}, {1.0, Pose::identity()}}, 0.05);
  EXPECT_EQ(out.size(), voxel_downsample(scan, 0.05).size());
}

TEST(Assemble, CountMismatch) {
  EXPECT_THROW(assemble_coarse_map({ReflectivityCloud{}}, {}, 0.05), CountMismatch);
}

TEST(Assemble, HalfRoomScansMatchFullScan) {
  const Scene scene;
  const double voxel = 0.05;
  const Pose A(forward_rotation(), Vec3(0.1, 0.0, 0.0));
  const Pose B(Eigen::Quaterniond(Eigen::AngleAxisd(kPi, Vec3::UnitZ())) * forward_rotation(), Vec3(-0.1, 0.2, 0.1));
  const auto a = simulate_lidar(scene, pattern(1.0), A, {}, 1);
  const auto b = simulate_lidar(scene, pattern(1.0), B, {}, 2);
  ReflectivityCloud full = transform_cloud(a, A);
  full.append(transform_cloud(b, B));
  const ReflectivityCloud map = assemble_coarse_map({a, b}, {{0.0, A}, {1.0, B}}, voxel);
  EXPECT_LE(max_nn_distance(map, full), voxel);
  EXPECT_LE(max_nn_distance(full, map), voxel);
}

TEST(Assemble, RigidEquivariance) {
  const Scene scene;
  const double voxel = 0.05;
  const Pose A(forward_rotation(), Vec3(0.1, 0.0, 0.0));
  const Pose B(Eigen::Quaterniond(Eigen::AngleAxisd(kPi / 2, Vec3::UnitZ())) * forward_rotation(), Vec3(0, 0.3, 0));
  const auto a = simulate_lidar(scene, pattern(0.3), A, {}, 1);
  const auto b = simulate_lidar(scene, pattern(0.3), B, {}, 2);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const Pose G = random_pose(rng, kPi, 2.0);
    const ReflectivityCloud moved = assemble_coarse_map({a, b}, {{0.0, G * A}, {1.0, G * B}}, voxel);
    const ReflectivityCloud ref = transform_cloud(assemble_coarse_map({a, b}, {{0.0, A}, {1.0, B}}, voxel), G);
    const double diag = std::sqrt(3.0) * voxel;
    EXPECT_LE(max_nn_distance(moved, ref), diag);
    EXPECT_LE(max_nn_distance(ref, moved), diag);
  }
}

// ---------------------------------------------------------------------------
// Stitching
// ---------------------------------------------------------------------------

TEST(Stitch, SubregionExactInit) {
  const ReflectivityCloud coarse = voxel_downsample(RoomTarget::get().cloud, 0.05);
  ReflectivityCloud fine;
  for (std::size_t i = 0; i < coarse.size(); ++i)
    if (coarse.points[i].x() > 1.0) fine.push_back(coarse.points[i], coarse.reflectivity[i], 0);
  ASSERT_GT(fine.size(), 1000u);
  const StitchResult res = stitch_fine(coarse, {fine}, {Pose::identity()}, IcpParams{}, 0.05);
  ASSERT_EQ(res.reports.size(), 1u);
  EXPECT_TRUE(res.reports[0].error.empty());
  EXPECT_LT(rotation_angle(res.reports[0].pose.rotation), 1e-10);
  EXPECT_LT(res.reports[0].pose.translation.norm(), 1e-10);
  EXPECT_LE(res.merged.size(), coarse.size() + fine.size());
}

TEST(Stitch, FineScanImprovesRoi) {
  const auto& s = StitchScene::get();
  const StitchResult res = stitch_fine(s.coarse, {s.fine}, {s.init}, IcpParams{}, 0.05);
  ASSERT_TRUE(res.reports[0].error.empty());
  const Aabb roi{Vec3(2.5, -1.0, -1.0), Vec3(3.1, 1.0, 1.0)};
  auto rms = [&](const ReflectivityCloud& c) {
    double sq = 0;
    std::size_t n = 0;
    for (const Vec3& p : c.points)
      if (roi.contains(p)) {
        const double d = distance_to_surfaces(s.scene, p);
        sq += d * d;
        ++n;
      }
    EXPECT_GT(n, 100u);
    return std::sqrt(sq / static_cast<double>(n));
  };
  EXPECT_LT(rms(res.merged), rms(s.coarse));
}

TEST(Stitch, ErrorIsolation) {
  const auto& s = StitchScene::get();
  const Pose lost = Pose::from_translation(Vec3(10, 0, 0)) * s.init;
  const StitchResult three = stitch_fine(s.coarse, {s.fine, s.fine_b, s.fine}, {s.init, lost, s.init}, IcpParams{}, 0.05);
  ASSERT_EQ(three.reports.size(), 3u);
  EXPECT_TRUE(three.reports[0].error.empty());
  EXPECT_EQ(three.reports[1].error, "NoCorrespondences");
  EXPECT_TRUE(three.reports[2].error.empty());
  const StitchResult two = stitch_fine(s.coarse, {s.fine, s.fine}, {s.init, s.init}, IcpParams{}, 0.05);
  EXPECT_EQ(three.merged.points, two.merged.points);
}

TEST(Stitch, CountMismatch) {
  const auto& coarse = RoomTarget::get().cloud;
  EXPECT_THROW(stitch_fine(coarse, {coarse}, {}, IcpParams{}, 0.05), CountMismatch);
}

// ---------------------------------------------------------------------------
// Colorization
// ---------------------------------------------------------------------------

TEST(Colorize, BehindCameraUncolored) {
  const CameraIntrinsics intr(100, 100, 50, 40, {0, 0, 0, 0}, 100, 80, 1.5);
  ReflectivityCloud c;
  c.push_back(Vec3(0, 0, 2), 0.5, 0);
  c.push_back(Vec3(0, 0, -2), 0.5, 0);
  const ColorView view{gray_to_color(GrayImage(100, 80, 0.7)), Pose::identity()};
  const ReflectivityCloud out = colorize(c, {view}, intr, Pose::identity());
  EXPECT_TRUE(out.colored[0]);
  EXPECT_NEAR(out.colors[0].x(), 0.7, 1e-12);
  EXPECT_FALSE(out.colored[1]);
}

TEST(Colorize, AlbedoAccuracy) {
  SimConfig cfg;
  cfg.noise = {0.0, 0.0};
  for (auto& f : cfg.scene.faces) f.cell = 0.5;
  cfg.scan.duration = 1.0;
  const SimOutput sim = simulate(cfg);
  const ReflectivityCloud world = transform_cloud(sim.cloud, cfg.lidar_pose());
  const ReflectivityCloud col = colorize(world, {{sim.color, cfg.lidar_pose()}}, cfg.intrinsics, cfg.extrinsic);
  const Vec3 o = cfg.lidar_pose().translation;
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < world.size(); ++i) {
    if (!col.colored[i]) continue;
    const auto hit = raycast(sim.scene, o, (world.points[i] - o).normalized());
    ASSERT_TRUE(hit);
    sum += (col.colors[i] - Vec3::Constant(hit->albedo)).cwiseAbs().mean();
    ++n;
  }
  ASSERT_GT(n, world.size() / 4);
  EXPECT_LT(sum / static_cast<double>(n), 0.02);
}

TEST(Colorize, NoColorThroughOccluder) {
  const auto& s = OcclusionScene::get();
  const ReflectivityCloud col = colorize(s.world, {{s.sim.color, s.cfg.lidar_pose()}}, s.cfg.intrinsics, s.cfg.extrinsic);
  const Vec3 cam = s.cfg.camera_pose.translation;
  const Pose T_CW = s.cfg.camera_pose.inverse();
  std::size_t occluded = 0, bad = 0;
  for (std::size_t i = 0; i < s.world.size(); ++i) {
    const Projection pr = project(s.cfg.intrinsics, T_CW.apply(s.world.points[i]));
    if (!pr.valid) continue;
    const auto ray = try_unproject(s.cfg.intrinsics, pr.pixel);
    if (!ray) continue;
    const auto hit = raycast(s.cfg.scene, cam, s.cfg.camera_pose.R() * *ray);
    const bool behind_box = hit && hit->surface >= 6 && hit->range < (s.world.points[i] - cam).norm() - 0.05;
    occluded += behind_box;
    bad += behind_box && col.colored[i];
  }
  EXPECT_GT(occluded, 10000u);
  EXPECT_EQ(bad, 0u);
}

// Constant images tag which view supplied each color.
TEST(Colorize, OnlyFromZBufferVisibleViews) {
  const auto& s = OcclusionScene::get();
  const Pose P1 = s.cfg.lidar_pose();
  const Pose P2 = Pose::from_translation(Vec3(0.3, 0.9, -0.2)) * P1;
  const int W = s.cfg.intrinsics.width(), H = s.cfg.intrinsics.height();
  const std::vector<ColorView> views{{gray_to_color(GrayImage(W, H, 0.3)), P1},
                                     {gray_to_color(GrayImage(W, H, 0.6)), P2}};
  const ColorizeParams params;
  const ReflectivityCloud col = colorize(s.world, views, s.cfg.intrinsics, s.cfg.extrinsic, params);
  const auto vis1 = visible_in_view(s.world, s.cfg.intrinsics, s.cfg.extrinsic * P1.inverse(), params);
  const auto vis2 = visible_in_view(s.world, s.cfg.intrinsics, s.cfg.extrinsic * P2.inverse(), params);
  std::size_t from1 = 0, from2 = 0;
  for (std::size_t i = 0; i < s.world.size(); ++i) {
    if (!col.colored[i]) {
      EXPECT_FALSE(vis1[i] || vis2[i]);
      continue;
    }
    const double g = col.colors[i].x();
    if (std::abs(g - 0.3) < 1e-9) {
      ASSERT_TRUE(vis1[i]);
      ++from1;
    } else {
      ASSERT_NEAR(g, 0.6, 1e-9);
      ASSERT_TRUE(vis2[i]);
      ++from2;
    }
  }
  EXPECT_GT(from1, 0u);
  EXPECT_GT(from2, 0u);
}

// ---------------------------------------------------------------------------
// Viewpoints
// ---------------------------------------------------------------------------

TEST(Viewpoints, EmptyMapSingleRingView) {
  const Aabb roi{Vec3(1, -1, 0), Vec3(2, 1, 1)};
  const double clearance = 0.5;
  const auto vps = propose_viewpoints(ReflectivityCloud{}, roi, 1, clearance);
  ASSERT_EQ(vps.size(), 1u);
  const Vec3 c = roi.center();
  const Vec3 eye = vps[0].pose.translation;
  EXPECT_NEAR(eye.z(), c.z(), 1e-12);
  EXPECT_NEAR((eye - c).head<2>().norm(), 0.5 * std::hypot(1.0, 2.0) + clearance, 1e-12);
  EXPECT_NEAR(vps[0].pose.R().col(2).dot((c - eye).normalized()), 1.0, 1e-12);
  EXPECT_EQ(vps[0].gain, 0u);
}

TEST(Viewpoints, EnclosedRoiHasNoFreeCandidates) {
  ReflectivityCloud shell;
  for (int i = -12; i <= 12; ++i)
    for (int j = -12; j <= 12; ++j)
      for (int a = 0; a < 3; ++a)
        for (double s : {-0.6, 0.6}) {
          Vec3 p;
          p[a] = s;
          p[(a + 1) % 3] = 0.05 * i;
          p[(a + 2) % 3] = 0.05 * j;
          shell.push_back(p, 0.5, 0);
        }
  const Aabb roi{Vec3::Constant(-0.5), Vec3::Constant(0.5)};
  EXPECT_THROW(propose_viewpoints(shell, roi, 1, 0.5), NoFreeCandidates);
}

TEST(Viewpoints, Preconditions) {
  const Aabb roi{Vec3::Zero(), Vec3::Ones()};
  EXPECT_THROW(propose_viewpoints(ReflectivityCloud{}, roi, 0, 0.5), InvalidStage);
  EXPECT_THROW(propose_viewpoints(ReflectivityCloud{}, Aabb{Vec3::Ones(), Vec3::Zero()}, 1, 0.5), InvalidScene);
}

TEST(Viewpoints, TwoSidedWallNeedsTwoViews) {
  // Slab faces at x = +-0.1 inside a sparse bounding frame.
  ReflectivityCloud map;
  for (int i = -50; i <= 50; ++i)
    for (int j = -25; j <= 25; ++j)
      for (double x : {-0.1, 0.1}) map.push_back(Vec3(x, 0.02 * i, 0.02 * j), 0.5, 0);
  for (double x : {-3.0, 3.0})
    for (double y : {-3.0, 3.0})
      for (double z : {-1.0, 1.0}) map.push_back(Vec3(x, y, z), 0.5, 0);
  const Aabb roi{Vec3(-0.15, -1.0, -0.5), Vec3(0.15, 1.0, 0.5)};
  const double clearance = 0.5;
  const ViewpointParams params;
  const auto vps = propose_viewpoints(map, roi, 2, clearance, params);
  ASSERT_EQ(vps.size(), 2u);

  // Coverage oracle over the same free candidate set.
  Vec3 lo = map.points[0], hi = lo;
  for (const Vec3& p : map.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Aabb bounds{lo, hi};
  std::vector<Vec3> free;
  for (const Vec3& p : viewpoint_candidates(roi, clearance, params.ring_count)) {
    bool clear = bounds.contains(p);
    for (const Vec3& q : map.points) clear = clear && (q - p).norm() > clearance;
    if (clear) free.push_back(p);
  }
  const auto cov = viewpoint_coverage(map, roi, free, params.voxel);
  std::size_t best_single = 0;
  for (const auto& c : cov) best_single = std::max(best_single, c.size());

  const auto chosen = viewpoint_coverage(map, roi, {vps[0].pose.translation, vps[1].pose.translation}, params.voxel);
  std::set<std::size_t> uni(chosen[0].begin(), chosen[0].end());
  uni.insert(chosen[1].begin(), chosen[1].end());
  EXPECT_GT(uni.size(), best_single);
  EXPECT_EQ(vps[0].gain + vps[1].gain, uni.size());
  EXPECT_EQ(vps[0].gain, best_single);
  // Views land on opposite sides of the slab.
  EXPECT_LT(vps[0].pose.translation.x() * vps[1].pose.translation.x(), 0.0);
}
