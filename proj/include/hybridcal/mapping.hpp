#pragma once

// Coarse-to-fine mapping: odometry map assembly, point-to-plane ICP stitching
// of stationary fine scans, colorization, and a greedy viewpoint stub.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "hybridcal/cloud.hpp"
#include "hybridcal/error.hpp"
#include "hybridcal/formats/poses.hpp"
#include "hybridcal/geom.hpp"
#include "hybridcal/image.hpp"
#include "hybridcal/parallel.hpp"

namespace hycal {

// ---------------------------------------------------------------------------
// ICP
// ---------------------------------------------------------------------------

struct IcpParams {
  int max_iterations = 30;
  double max_corr_dist = 0.5;  // d_0
  double decay = 0.9;          // d_k = d_0 * decay^k
  double rot_tol = 1e-5;       // rad per step
  double trans_tol = 1e-5;     // m per step
  int normal_k = 10;

  void validate() const {
    if (!(max_corr_dist > 0)) throw InvalidStage("ICP max_corr_dist must be positive");
    if (!(decay > 0 && decay <= 1)) throw InvalidStage("ICP decay must lie in (0,1]");
    if (max_iterations < 1) throw InvalidStage("ICP needs at least one iteration");
    if (normal_k < 3) throw InvalidStage("ICP normal_k must be >= 3");
  }
};

struct StitchReport {
  Pose pose;
  std::vector<double> rms_history;  // initial, then one per accepted iteration
  double inlier_fraction = 0;
  bool converged = false;
  int iterations = 0;
  std::string error;  // error name when registration failed
};

inline constexpr std::size_t kMinIcpCorrespondences = 6;
inline constexpr double kMaxIcpCondition = 1e12;

// Point-to-plane normals of a fixed target, reused across registrations.
struct IcpTarget {
  const ReflectivityCloud* cloud = nullptr;
  KdTree tree;
  std::vector<Vec3> normals;

  IcpTarget(const ReflectivityCloud& target, int normal_k)
      : cloud(&target), tree(target.points),
        normals(estimate_normals(target, static_cast<std::size_t>(normal_k))) {}
};

namespace detail {

struct IcpLinearization {
  Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
  Vec6 g = Vec6::Zero();
  double sq_sum = 0;
  std::size_t count = 0;
};

inline IcpLinearization icp_linearize(const ReflectivityCloud& source, const IcpTarget& target, const Pose& T,
                                      double max_dist) {
  const Mat3 R = T.R();
  const Mat3 Rt = R.transpose();
  struct Row {
    Vec6 J;
    double r;
    bool ok = false;
  };
  std::vector<Row> rows(source.size());
  parallel_for(source.size(), [&](std::size_t i) {
    const Vec3& s = source.points[i];
    const Vec3 p = T.apply(s);
    const Neighbor nn = target.tree.nearest_within(p, max_dist);
    if (nn.index < 0) return;
    const Vec3& n = target.normals[static_cast<std::size_t>(nn.index)];
    const Vec3 m = Rt * n;
    rows[i].r = n.dot(p - target.tree.points()[static_cast<std::size_t>(nn.index)]);
    rows[i].J << s.cross(m), m;
    rows[i].ok = true;
  }, 1024);
  IcpLinearization lin;
  for (const Row& row : rows) {
    if (!row.ok) continue;
    lin.H += row.J * row.J.transpose();
    lin.g += row.J * row.r;
    lin.sq_sum += row.r * row.r;
    ++lin.count;
  }
  return lin;
}

inline double rms_of(const IcpLinearization& lin) {
  return lin.count ? std::sqrt(lin.sq_sum / static_cast<double>(lin.count)) : 0.0;
}

}  // namespace detail

// Finds T such that T * source aligns with target. A step that raises the
// gated RMS is rejected and ends the iteration.
inline StitchReport icp_point_to_plane(const ReflectivityCloud& source, const IcpTarget& target, const Pose& init,
                                       const IcpParams& params) {
  params.validate();
  if (source.empty()) throw EmptyCloud("ICP source cloud is empty");
  StitchReport rep;
  rep.pose = init;
  double dist = params.max_corr_dist;
  auto lin = detail::icp_linearize(source, target, rep.pose, dist);
  if (lin.count < kMinIcpCorrespondences)
    throw NoCorrespondences("only " + std::to_string(lin.count) + " correspondences within " + std::to_string(dist) +
                            " m of the initial pose");
  rep.rms_history.push_back(detail::rms_of(lin));
  rep.inlier_fraction = static_cast<double>(lin.count) / static_cast<double>(source.size());

  for (int it = 0; it < params.max_iterations; ++it) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(lin.H);
    const double lo = es.eigenvalues()[0], hi = es.eigenvalues()[5];
    const double cond = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(cond <= kMaxIcpCondition))
      throw DegenerateNormals("point-to-plane normal matrix condition " + std::to_string(cond) + " exceeds 1e12");
    const Vec6 xi = lin.H.ldlt().solve(-lin.g);
    ++rep.iterations;
    const Pose cand = rep.pose * se3_exp(Twist(xi));
    const double next_dist = dist * params.decay;
    auto next = detail::icp_linearize(source, target, cand, next_dist);
    if (next.count < kMinIcpCorrespondences || detail::rms_of(next) > rep.rms_history.back()) break;
    rep.pose = cand;
    dist = next_dist;
    lin = std::move(next);
    rep.rms_history.push_back(detail::rms_of(lin));
    rep.inlier_fraction = static_cast<double>(lin.count) / static_cast<double>(source.size());
    if (xi.head<3>().norm() < params.rot_tol && xi.tail<3>().norm() < params.trans_tol) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

inline StitchReport icp_point_to_plane(const ReflectivityCloud& source, const ReflectivityCloud& target,
                                       const Pose& init, const IcpParams& params) {
  params.validate();
  if (target.size() < static_cast<std::size_t>(params.normal_k))
    throw TooFewPoints("ICP target needs at least normal_k points");
  return icp_point_to_plane(source, IcpTarget(target, params.normal_k), init, params);
}

// ---------------------------------------------------------------------------
// Map assembly and stitching
// ---------------------------------------------------------------------------

inline ReflectivityCloud assemble_coarse_map(const std::vector<ReflectivityCloud>& scans,
                                             const std::vector<PoseRecord>& poses, double voxel) {
  if (scans.size() != poses.size())
    throw CountMismatch(std::to_string(scans.size()) + " scans but " + std::to_string(poses.size()) + " poses");
  ReflectivityCloud all;
  for (std::size_t i = 0; i < scans.size(); ++i) all.append(transform_cloud(scans[i], poses[i].pose));
  return voxel_downsample(all, voxel);
}

struct StitchResult {
  ReflectivityCloud merged;
  std::vector<StitchReport> reports;
};

inline StitchResult stitch_fine(const ReflectivityCloud& coarse, const std::vector<ReflectivityCloud>& fine_scans,
                                const std::vector<Pose>& init_poses, const IcpParams& icp, double fusion_voxel) {
  if (fine_scans.size() != init_poses.size())
    throw CountMismatch(std::to_string(fine_scans.size()) + " fine scans but " + std::to_string(init_poses.size()) +
                        " initial poses");
  if (!(fusion_voxel > 0)) throw InvalidPoint("fusion voxel must be positive");
  icp.validate();
  if (coarse.size() < static_cast<std::size_t>(icp.normal_k)) throw TooFewPoints("coarse map too small for ICP");
  const IcpTarget target(coarse, icp.normal_k);

  StitchResult res;
  ReflectivityCloud fine;
  for (std::size_t i = 0; i < fine_scans.size(); ++i) {
    try {
      StitchReport rep = icp_point_to_plane(fine_scans[i], target, init_poses[i], icp);
      fine.append(transform_cloud(fine_scans[i], rep.pose));
      res.reports.push_back(std::move(rep));
    } catch (const Error& e) {
      StitchReport rep;
      rep.pose = init_poses[i];
      rep.error = e.name();
      res.reports.push_back(std::move(rep));
    }
  }
  if (fine.empty()) {
    res.merged = coarse;
    return res;
  }
  // Fine data wins: drop coarse points that have a fine point within the fusion voxel.
  const KdTree fine_tree(fine.points);
  std::vector<std::uint8_t> keep(coarse.size(), 0);
  parallel_for(coarse.size(), [&](std::size_t i) {
    keep[i] = fine_tree.nearest_within(coarse.points[i], fusion_voxel).index < 0;
  }, 1024);
  ReflectivityCloud kept;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    if (!keep[i]) continue;
    kept.push_back(coarse.points[i], coarse.reflectivity[i], coarse.timestamps[i]);
    if (coarse.has_colors()) {
      kept.colors.push_back(coarse.colors[i]);
      kept.colored.push_back(coarse.colored[i]);
    }
  }
  ReflectivityCloud fused = voxel_downsample(fine, fusion_voxel);
  if (kept.has_colors() != fused.has_colors()) {
    kept.colors.clear();
    kept.colored.clear();
    fused.colors.clear();
    fused.colored.clear();
  }
  res.merged = std::move(kept);
  res.merged.append(fused);
  return res;
}

// ---------------------------------------------------------------------------
// Colorization
// ---------------------------------------------------------------------------

struct ColorView {
  ColorImage image;
  Pose pose;  // LiDAR (rig) pose in the world at capture time
};

inline ColorImage gray_to_color(const GrayImage& g) {
  ColorImage c(g.width, g.height);
  for (std::size_t i = 0; i < g.data.size(); ++i) c.data[3 * i] = c.data[3 * i + 1] = c.data[3 * i + 2] = g.data[i];
  return c;
}

struct ColorizeParams {
  int splat_radius = 1;     // z-buffer splat, pixels
  double tolerance = 0.01;  // depth fusion tolerance, m; visibility slack is 3x
  int normal_k = 10;
};

// Per-view visibility of every cloud point (world frame): range depth vs. a
// z-buffer rendered from the cloud itself.
inline std::vector<std::uint8_t> visible_in_view(const ReflectivityCloud& cloud, const CameraIntrinsics& intr,
                                                 const Pose& T_CW, const ColorizeParams& params,
                                                 std::vector<Vec2>* pixels = nullptr) {
  const int W = intr.width(), H = intr.height();
  const std::size_t n = cloud.size();
  std::vector<Vec2> px(n);
  std::vector<double> depth(n, -1.0);
  parallel_for(n, [&](std::size_t i) {
    const Vec3 pc = T_CW.apply(cloud.points[i]);
    const Projection pr = project(intr, pc);
    if (!pr.valid) return;
    px[i] = pr.pixel;
    depth[i] = pc.norm();
  }, 4096);
  std::vector<double> zbuf(static_cast<std::size_t>(W) * H, std::numeric_limits<double>::infinity());
  const int r = std::max(0, params.splat_radius);
  for (std::size_t i = 0; i < n; ++i) {
    if (depth[i] < 0) continue;
    const int x = static_cast<int>(std::lround(px[i].x())), y = static_cast<int>(std::lround(px[i].y()));
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int xx = x + dx, yy = y + dy;
        if (xx < 0 || yy < 0 || xx >= W || yy >= H) continue;
        double& z = zbuf[static_cast<std::size_t>(yy) * W + xx];
        z = std::min(z, depth[i]);
      }
  }
  std::vector<std::uint8_t> vis(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (depth[i] < 0) continue;
    const int x = static_cast<int>(std::lround(px[i].x())), y = static_cast<int>(std::lround(px[i].y()));
    vis[i] = depth[i] <= zbuf[static_cast<std::size_t>(y) * W + x] + 3.0 * params.tolerance;
  }
  if (pixels) *pixels = std::move(px);
  return vis;
}

// Cloud points are in the world frame. Each view's camera is pose * extr^-1.
inline ReflectivityCloud colorize(const ReflectivityCloud& cloud, const std::vector<ColorView>& views,
                                  const CameraIntrinsics& intr, const Pose& extr, const ColorizeParams& params = {}) {
  ReflectivityCloud out = cloud;
  const std::size_t n = cloud.size();
  out.colors.assign(n, Vec3::Zero());
  out.colored.assign(n, 0);
  if (n == 0 || views.empty()) return out;

  std::vector<Vec3> normals;
  if (views.size() > 1 && n >= static_cast<std::size_t>(std::max(params.normal_k, 3)))
    normals = estimate_normals(cloud, static_cast<std::size_t>(std::max(params.normal_k, 3)));

  std::vector<double> best_score(n, std::numeric_limits<double>::infinity());
  for (const ColorView& view : views) {
    if (view.image.width != intr.width() || view.image.height != intr.height())
      throw InvalidIntrinsics("image size does not match the intrinsics");
    const Pose T_CW = extr * view.pose.inverse();
    const Vec3 cam_center = view.pose.apply(extr.inverse().translation);
    std::vector<Vec2> px;
    const auto vis = visible_in_view(cloud, intr, T_CW, params, &px);
    for (std::size_t i = 0; i < n; ++i) {
      if (!vis[i]) continue;
      const Vec3 ray = cloud.points[i] - cam_center;
      // Incidence angle via |cos|; without normals fall back to range.
      const double score = normals.empty() ? ray.norm() : -std::abs(normals[i].dot(ray.normalized()));
      if (score < best_score[i]) {
        best_score[i] = score;
        out.colors[i] = sample_bilinear(view.image, px[i].x(), px[i].y());
        out.colored[i] = 1;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Viewpoint proposal (greedy coverage stub)
// ---------------------------------------------------------------------------

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
  double distance(const Vec3& p) const { return (min - p).cwiseMax(p - max).cwiseMax(Vec3::Zero()).norm(); }
};

struct Viewpoint {
  Pose pose;           // camera-style: +z faces the ROI centroid
  std::size_t gain = 0;  // ROI voxels newly covered when chosen
};

struct ViewpointParams {
  double voxel = 0.05;
  int ring_count = 16;
};

inline Pose look_at(const Vec3& eye, const Vec3& target) {
  Vec3 z = target - eye;
  if (z.norm() < 1e-12) return Pose::from_translation(eye);
  z.normalize();
  Vec3 up = std::abs(z.z()) > 0.99 ? Vec3::UnitY() : Vec3::UnitZ();
  const Vec3 x = up.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R << x, y, z;
  return {Eigen::Quaterniond(R).normalized(), eye};
}

// Ring candidates first (at the clearance distance beyond the ROI's horizontal
// half-diagonal), then a horizontal grid at the ROI centroid height.
inline std::vector<Vec3> viewpoint_candidates(const Aabb& roi, double clearance, int ring_count) {
  std::vector<Vec3> out;
  const Vec3 c = roi.center();
  const double radius = 0.5 * (roi.max - roi.min).head<2>().norm() + clearance;
  for (int i = 0; i < ring_count; ++i) {
    const double a = 2 * kPi * i / ring_count;
    out.emplace_back(c.x() + radius * std::cos(a), c.y() + radius * std::sin(a), c.z());
  }
  const double step = clearance;
  const int nx = static_cast<int>(std::floor((roi.max.x() - roi.min.x() + 4 * clearance) / step)) + 1;
  const int ny = static_cast<int>(std::floor((roi.max.y() - roi.min.y() + 4 * clearance) / step)) + 1;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const Vec3 p(roi.min.x() - 2 * clearance + i * step, roi.min.y() - 2 * clearance + j * step, c.z());
      if (roi.distance(p) >= clearance) out.push_back(p);
    }
  return out;
}

namespace detail {

// Voxel DDA from origin to the center of target; occupied voxels other than
// the target and its 26-neighborhood block the ray.
inline bool voxel_visible(const std::unordered_set<VoxelKey, VoxelKeyHash>& occupied, const Vec3& origin,
                          const VoxelKey& target, double voxel) {
  const Vec3 goal((target.x + 0.5) * voxel, (target.y + 0.5) * voxel, (target.z + 0.5) * voxel);
  const Vec3 d = goal - origin;
  const double len = d.norm();
  if (len < 1e-12) return true;
  const Vec3 dir = d / len;
  VoxelKey cur = voxel_key(origin, voxel);
  std::int64_t* c[3] = {&cur.x, &cur.y, &cur.z};
  const std::int64_t tgt[3] = {target.x, target.y, target.z};
  int stepv[3];
  double t_max[3], t_delta[3];
  for (int a = 0; a < 3; ++a) {
    stepv[a] = dir[a] > 0 ? 1 : (dir[a] < 0 ? -1 : 0);
    if (stepv[a] == 0) {
      t_max[a] = t_delta[a] = std::numeric_limits<double>::infinity();
      continue;
    }
    const double boundary = (static_cast<double>(*c[a]) + (stepv[a] > 0 ? 1 : 0)) * voxel;
    t_max[a] = (boundary - origin[a]) / dir[a];
    t_delta[a] = voxel / std::abs(dir[a]);
  }
  for (int guard = 0; guard < 1000000; ++guard) {
    bool near_target = true;
    for (int a = 0; a < 3; ++a) near_target = near_target && std::abs(*c[a] - tgt[a]) <= 1;
    if (near_target) return true;
    if (occupied.count(cur)) return false;
    const int a = t_max[0] < t_max[1] ? (t_max[0] < t_max[2] ? 0 : 2) : (t_max[1] < t_max[2] ? 1 : 2);
    if (t_max[a] > len + voxel) return true;
    *c[a] += stepv[a];
    t_max[a] += t_delta[a];
  }
  return true;
}

}  // namespace detail

// Number of ROI surface voxels visible from each candidate, as sorted key lists.
inline std::vector<std::vector<std::size_t>> viewpoint_coverage(const ReflectivityCloud& map, const Aabb& roi,
                                                                const std::vector<Vec3>& candidates, double voxel) {
  std::unordered_set<VoxelKey, VoxelKeyHash> occupied;
  std::vector<VoxelKey> roi_voxels;
  for (const Vec3& p : map.points) {
    const VoxelKey k = voxel_key(p, voxel);
    if (occupied.insert(k).second && roi.contains(p)) roi_voxels.push_back(k);
  }
  // Voxels whose first point fell outside the ROI but others inside.
  std::unordered_set<VoxelKey, VoxelKeyHash> in_roi(roi_voxels.begin(), roi_voxels.end());
  for (const Vec3& p : map.points)
    if (roi.contains(p)) {
      const VoxelKey k = voxel_key(p, voxel);
      if (in_roi.insert(k).second) roi_voxels.push_back(k);
    }
  std::vector<std::vector<std::size_t>> cov(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t c) {
    for (std::size_t v = 0; v < roi_voxels.size(); ++v)
      if (detail::voxel_visible(occupied, candidates[c], roi_voxels[v], voxel)) cov[c].push_back(v);
  }, 1);
  return cov;
}

inline std::vector<Viewpoint> propose_viewpoints(const ReflectivityCloud& map, const Aabb& roi, int k,
                                                 double clearance, const ViewpointParams& params = {}) {
  if (k < 1) throw InvalidStage("viewpoint count must be >= 1");
  if (!(clearance > 0)) throw InvalidStage("clearance must be positive");
  if (!(params.voxel > 0)) throw InvalidPoint("voxel size must be positive");
  if (!((roi.max - roi.min).array() >= 0).all()) throw InvalidScene("ROI min must not exceed max");

  std::vector<Vec3> free;
  const auto cands = viewpoint_candidates(roi, clearance, params.ring_count);
  if (map.empty()) {
    free = cands;
  } else {
    // Free space: inside the mapped extent and clear of every map point.
    Vec3 lo = map.points[0], hi = lo;
    for (const Vec3& p : map.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Aabb bounds{lo, hi};
    const KdTree tree(map.points);
    for (const Vec3& p : cands)
      if (bounds.contains(p) && tree.nearest_within(p, clearance).index < 0) free.push_back(p);
  }
  if (free.empty()) throw NoFreeCandidates("no candidate position has " + std::to_string(clearance) + " m clearance");

  const auto cov = viewpoint_coverage(map, roi, free, params.voxel);
  std::vector<std::uint8_t> covered;
  std::size_t total = 0;
  for (const auto& c : cov)
    for (std::size_t v : c) total = std::max(total, v + 1);
  covered.assign(total, 0);
  std::vector<std::uint8_t> used(free.size(), 0);
  std::vector<Viewpoint> out;
  const Vec3 centroid = roi.center();
  for (int pick = 0; pick < k && out.size() < free.size(); ++pick) {
    std::size_t best = free.size(), best_gain = 0;
    for (std::size_t c = 0; c < free.size(); ++c) {
      if (used[c]) continue;
      std::size_t gain = 0;
      for (std::size_t v : cov[c]) gain += !covered[v];
      if (best == free.size() || gain > best_gain) {
        best = c;
        best_gain = gain;
      }
    }
    used[best] = 1;
    for (std::size_t v : cov[best]) covered[v] = 1;
    out.push_back({look_at(free[best], centroid), best_gain});
  }
  return out;
}

}  // namespace hycal
