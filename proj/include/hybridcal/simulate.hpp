#pragma once

// Synthetic ground truth: box rooms with patterned albedo, a rosette-style
// non-repetitive scan sampler, and a Lambertian fisheye renderer
// (image intensity = albedo x per-surface brightness gain).

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "hybridcal/cloud.hpp"
#include "hybridcal/error.hpp"
#include "hybridcal/geom.hpp"
#include "hybridcal/image.hpp"
#include "hybridcal/parallel.hpp"

namespace hycal {

enum class PatternType { Uniform, Checker, Stripe };

// Planar albedo pattern of one room face, in absolute world coordinates of
// the face's two tangent axes (x-faces: y,z; y-faces: x,z; z-faces: x,y).
struct FacePattern {
  PatternType type = PatternType::Checker;
  double cell = 0.25;
  double albedo_low = 0.2;
  double albedo_high = 0.8;
  double gain = 1.0;              // camera-only brightness gain
  Vec3 tint = Vec3::Ones();       // camera-only color tint

  double albedo(double u, double v) const {
    switch (type) {
      case PatternType::Uniform: return albedo_low;
      case PatternType::Checker: {
        const auto parity = static_cast<std::int64_t>(std::floor(u / cell)) + static_cast<std::int64_t>(std::floor(v / cell));
        return (parity & 1) ? albedo_high : albedo_low;
      }
      case PatternType::Stripe:
        return (static_cast<std::int64_t>(std::floor(u / cell)) & 1) ? albedo_high : albedo_low;
    }
    return albedo_low;
  }
};

struct InteriorBox {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  double albedo = 0.5;
  double gain = 1.0;
  Vec3 tint = Vec3::Ones();
};

// Face order: -x, +x, -y, +y, -z, +z.
struct Scene {
  Vec3 room_min{-3.0, -2.0, -1.5};
  Vec3 room_max{3.0, 2.0, 1.5};
  std::array<FacePattern, 6> faces{};
  std::vector<InteriorBox> boxes;

  void validate() const {
    if (!((room_max - room_min).array() > 0).all()) throw InvalidScene("room extents must be positive");
    auto check_albedo = [](double a) {
      if (!(a >= 0.0 && a <= 1.0)) throw InvalidScene("albedo outside [0,1]");
    };
    for (const auto& f : faces) {
      check_albedo(f.albedo_low);
      check_albedo(f.albedo_high);
      if (f.type != PatternType::Uniform && !(f.cell > 0)) throw InvalidScene("pattern cell must be positive");
      if (!(f.gain >= 0)) throw InvalidScene("brightness gain must be non-negative");
    }
    for (const auto& b : boxes) {
      check_albedo(b.albedo);
      if (!((b.max - b.min).array() > 0).all()) throw InvalidScene("interior box extents must be positive");
    }
  }

  bool contains(const Vec3& p) const {
    return (p.array() > room_min.array()).all() && (p.array() < room_max.array()).all();
  }
};

struct Hit {
  double range = 0;
  double albedo = 0;
  double gain = 1;
  Vec3 tint = Vec3::Ones();
  int surface = -1;  // 0..5 room faces, 6+ interior boxes
};

inline std::pair<int, int> tangent_axes(int axis) {
  switch (axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
  }
}

// Nearest positive intersection of the ray with the room shell or interior boxes.
inline std::optional<Hit> raycast(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  Hit best;
  best.range = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) continue;
    const bool positive = dir[a] > 0;
    const double bound = positive ? scene.room_max[a] : scene.room_min[a];
    const double t = (bound - origin[a]) / dir[a];
    if (t > 0 && t < best.range) {
      best.range = t;
      best.surface = 2 * a + (positive ? 1 : 0);
    }
  }
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    const auto& box = scene.boxes[b];
    double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (dir[a] == 0.0) {
        if (origin[a] < box.min[a] || origin[a] > box.max[a]) miss = true;
        continue;
      }
      double t0 = (box.min[a] - origin[a]) / dir[a];
      double t1 = (box.max[a] - origin[a]) / dir[a];
      if (t0 > t1) std::swap(t0, t1);
      t_near = std::max(t_near, t0);
      t_far = std::min(t_far, t1);
      if (t_near > t_far) miss = true;
    }
    if (!miss && t_near > 1e-12 && t_near < best.range) {
      best.range = t_near;
      best.surface = 6 + static_cast<int>(b);
    }
  }
  if (best.surface < 0) return std::nullopt;

  if (best.surface < 6) {
    const int axis = best.surface / 2;
    const FacePattern& f = scene.faces[best.surface];
    const Vec3 p = origin + best.range * dir;
    const auto [ua, va] = tangent_axes(axis);
    best.albedo = f.albedo(p[ua], p[va]);
    best.gain = f.gain;
    best.tint = f.tint;
  } else {
    const auto& box = scene.boxes[best.surface - 6];
    best.albedo = box.albedo;
    best.gain = box.gain;
    best.tint = box.tint;
  }
  return best;
}

// Distance from p to the nearest scene surface (room shell or box boundary).
inline double distance_to_surfaces(const Scene& scene, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    best = std::min(best, std::abs(p[a] - scene.room_min[a]));
    best = std::min(best, std::abs(p[a] - scene.room_max[a]));
  }
  for (const auto& box : scene.boxes) {
    const Vec3 outside = (box.min - p).cwiseMax(p - box.max).cwiseMax(Vec3::Zero());
    double d = outside.norm();
    if (d == 0.0) {
      d = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) d = std::min({d, p[a] - box.min[a], box.max[a] - p[a]});
    }
    best = std::min(best, d);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Scan pattern
// ---------------------------------------------------------------------------

struct ScanPattern {
  double f1 = 16.180339887498949;   // nodding frequency, Hz
  double f2 = 141.42135623730951;   // spinning frequency, Hz
  double cone_half_angle = 1.2;     // radians
  double rate = 2e5;                // points / s
  double duration = 5.0;            // s

  void validate() const {
    if (!(f1 > 0) || !(f2 > 0)) throw InvalidPattern("frequencies must be positive");
    if (!(cone_half_angle > 0) || cone_half_angle > kPi) throw InvalidPattern("cone half angle must lie in (0, pi]");
    if (!(rate > 0) || !(duration >= 0)) throw InvalidPattern("rate must be positive and duration non-negative");
    const double ratio = f1 / f2;
    for (int q = 1; q <= 50; ++q) {
      const double p = std::round(ratio * q);
      if (p >= 1 && p <= 50 && std::abs(ratio - p / q) <= 1e-6)
        throw InvalidPattern("f1/f2 is within 1e-6 of " + std::to_string(static_cast<int>(p)) + "/" +
                             std::to_string(q) + "; the pattern would repeat");
    }
  }

  std::size_t count() const { return static_cast<std::size_t>(std::floor(rate * duration)); }
};

struct ScanSample {
  Vec3 dir;
  double t;
};

inline ScanSample scan_direction_at(const ScanPattern& pat, double t) {
  const double theta = pat.cone_half_angle * std::abs(std::sin(2.0 * kPi * pat.f1 * t));
  const double phi = 2.0 * kPi * pat.f2 * t;
  return {Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)), t};
}

inline std::vector<ScanSample> sample_scan_directions(const ScanPattern& pat) {
  pat.validate();
  std::vector<ScanSample> out(pat.count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scan_direction_at(pat, static_cast<double>(i) / pat.rate);
  return out;
}

struct LidarNoise {
  double range_sigma = 0.0;
  double reflectivity_sigma = 0.0;
};

// Cloud in the LiDAR frame. Noise is drawn sequentially from a seeded
// generator before ray evaluation, so output is independent of threading.
inline ReflectivityCloud simulate_lidar(const Scene& scene, const ScanPattern& pat, const Pose& T_WL,
                                        const LidarNoise& noise, std::uint64_t seed) {
  scene.validate();
  const auto samples = sample_scan_directions(pat);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> eps_r(samples.size()), eps_a(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    eps_r[i] = noise.range_sigma * gauss(rng);
    eps_a[i] = noise.reflectivity_sigma * gauss(rng);
  }
  std::vector<std::optional<Hit>> hits(samples.size());
  const Mat3 R = T_WL.R();
  parallel_for(samples.size(), [&](std::size_t i) { hits[i] = raycast(scene, T_WL.translation, R * samples[i].dir); });

  ReflectivityCloud cloud;
  cloud.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!hits[i]) continue;
    cloud.push_back((hits[i]->range + eps_r[i]) * samples[i].dir, std::clamp(hits[i]->albedo + eps_a[i], 0.0, 1.0),
                    samples[i].t);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Camera rendering
// ---------------------------------------------------------------------------

namespace detail {

template <typename Shade>
void render_pixels(const Scene& scene, const CameraIntrinsics& intr, const Pose& T_WC, int supersample,
                   Shade&& shade) {
  scene.validate();
  const int ss = std::max(1, supersample);
  const Mat3 R = T_WC.R();
  const std::size_t n = static_cast<std::size_t>(intr.width()) * intr.height();
  parallel_for(n, [&](std::size_t idx) {
    const int x = static_cast<int>(idx % intr.width());
    const int y = static_cast<int>(idx / intr.width());
    for (int sy = 0; sy < ss; ++sy)
      for (int sx = 0; sx < ss; ++sx) {
        const Vec2 px(x + (sx + 0.5) / ss - 0.5, y + (sy + 0.5) / ss - 0.5);
        const auto ray = try_unproject(intr, px);
        if (!ray) continue;
        if (auto hit = raycast(scene, T_WC.translation, R * *ray)) shade(idx, *hit, 1.0 / (ss * ss));
      }
  }, 256);
}

}  // namespace detail

inline GrayImage render_camera(const Scene& scene, const CameraIntrinsics& intr, const Pose& T_WC, int supersample) {
  GrayImage img(intr.width(), intr.height());
  detail::render_pixels(scene, intr, T_WC, supersample, [&](std::size_t i, const Hit& h, double w) {
    img.data[i] += w * std::clamp(h.albedo * h.gain, 0.0, 1.0);
  });
  return img;
}

inline ColorImage render_camera_color(const Scene& scene, const CameraIntrinsics& intr, const Pose& T_WC,
                                      int supersample) {
  ColorImage img(intr.width(), intr.height());
  detail::render_pixels(scene, intr, T_WC, supersample, [&](std::size_t i, const Hit& h, double w) {
    for (int c = 0; c < 3; ++c) img.data[3 * i + c] += w * std::clamp(h.albedo * h.gain * h.tint[c], 0.0, 1.0);
  });
  return img;
}

// Per-face camera brightness gains drawn uniformly from [lo, hi].
inline void randomize_gains(Scene& scene, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& f : scene.faces) f.gain = u(rng);
  for (auto& b : scene.boxes) b.gain = u(rng);
}

// ---------------------------------------------------------------------------
// Full simulation setup
// ---------------------------------------------------------------------------

inline CameraIntrinsics default_intrinsics() {
  return {240.0, 240.0, 512.3, 383.7, {-0.02, 0.003, -0.0005, 0.00002}, 1024, 768, 1.75};
}

inline Pose default_camera_pose() {
  // Camera z looks along world +x, x to world -y, y to world -z; then a small pitch/yaw.
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);
  const Eigen::Quaterniond tilt = Eigen::AngleAxisd(deg2rad(6.0), Vec3::UnitZ()) *
                                  Eigen::AngleAxisd(deg2rad(-8.0), Vec3::UnitY());
  return {tilt * Eigen::Quaterniond(R), Vec3(0.4, -0.3, 0.2)};
}

inline Pose default_extrinsic() {
  const Eigen::Quaterniond q = Eigen::AngleAxisd(deg2rad(1.0), Vec3::UnitZ()) *
                               Eigen::AngleAxisd(deg2rad(-1.5), Vec3::UnitY()) *
                               Eigen::AngleAxisd(deg2rad(2.0), Vec3::UnitX());
  return {q, Vec3(0.05, -0.08, 0.03)};
}

struct SimConfig {
  Scene scene;
  CameraIntrinsics intrinsics = default_intrinsics();
  Pose camera_pose = default_camera_pose();  // T_world_camera
  Pose extrinsic = default_extrinsic();      // T_CL: LiDAR -> camera
  ScanPattern scan;
  LidarNoise noise{0.005, 0.02};
  std::uint64_t seed = 1;
  int supersample = 2;
  bool non_lambertian = false;
  double gain_min = 0.7;
  double gain_max = 1.3;

  Pose lidar_pose() const { return camera_pose * extrinsic; }
};

struct GroundTruth {
  CameraIntrinsics intrinsics;
  Pose extrinsic;
  Pose camera_pose;
  Pose lidar_pose;
};

struct SimOutput {
  ReflectivityCloud cloud;  // LiDAR frame
  GrayImage image;
  ColorImage color;
  GroundTruth gt;
  Scene scene;  // with the gains actually applied
};

inline SimOutput simulate(const SimConfig& cfg) {
  SimOutput out{{}, {}, {}, {cfg.intrinsics, cfg.extrinsic, cfg.camera_pose, cfg.lidar_pose()}, cfg.scene};
  if (!cfg.scene.contains(cfg.camera_pose.translation) || !cfg.scene.contains(cfg.lidar_pose().translation))
    throw InvalidScene("sensor origin must lie strictly inside the room");
  if (cfg.non_lambertian) randomize_gains(out.scene, cfg.seed ^ 0x5eedULL, cfg.gain_min, cfg.gain_max);
  out.cloud = simulate_lidar(out.scene, cfg.scan, cfg.lidar_pose(), cfg.noise, cfg.seed);
  out.color = render_camera_color(out.scene, cfg.intrinsics, cfg.camera_pose, cfg.supersample);
  out.image = out.color.luminance();
  return out;
}

}  // namespace hycal
