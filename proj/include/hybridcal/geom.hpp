#pragma once

// Rigid-body math (SE(3) with a unit-quaternion rotation) and the wide-FoV
// equidistant-polynomial camera model with analytic derivatives.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "hybridcal/error.hpp"

namespace hycal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  // clang-format on
  return s;
}

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------

struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  // unit-to-rounding inputs are kept as-is; normalizing twice is not bit-stable
  Pose(const Eigen::Quaterniond& q, const Vec3& t)
      : rotation(std::abs(q.squaredNorm() - 1.0) < 1e-13 ? q : q.normalized()), translation(t) {}

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Eigen::Quaterniond::Identity(), t}; }

  Mat3 R() const { return rotation.toRotationMatrix(); }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    const Eigen::Quaterniond qi = rotation.conjugate();
    return {qi, -(qi * translation)};
  }

  // this * other: apply `other` first.
  Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
};

inline Vec3 pose_apply(const Pose& T, const Vec3& p) { return T.apply(p); }
inline Pose compose(const Pose& a, const Pose& b) { return a * b; }

// Rotation angle of q in [0, pi].
inline double rotation_angle(const Eigen::Quaterniond& q) {
  const double s = q.vec().norm();
  return 2.0 * std::atan2(s, std::abs(q.w()));
}

inline double rotation_distance(const Pose& a, const Pose& b) {
  return rotation_angle(a.rotation * b.rotation.conjugate());
}

// ---------------------------------------------------------------------------
// Twist and the SE(3) exponential / logarithm
// ---------------------------------------------------------------------------

struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& w, const Vec3& t) : omega(w), v(t) {}
  explicit Twist(const Vec6& xi) : omega(xi.head<3>()), v(xi.tail<3>()) {}

  Vec6 vector() const {
    Vec6 xi;
    xi << omega, v;
    return xi;
  }
};

namespace detail {

// sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3
struct SO3Coeffs {
  double a, b, c;
};

inline SO3Coeffs so3_coeffs(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-4) {
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  }
  const double s = std::sin(theta), c = std::cos(theta);
  return {s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta)};
}

}  // namespace detail

inline Pose se3_exp(const Twist& xi) {
  const double theta = xi.omega.norm();
  const double t2 = theta * theta;
  // sin(theta/2)/theta
  const double half = theta < 1e-4 ? 0.5 - t2 / 48.0 + t2 * t2 / 3840.0 : std::sin(0.5 * theta) / theta;
  Eigen::Quaterniond q(std::cos(0.5 * theta), half * xi.omega.x(), half * xi.omega.y(),
                       half * xi.omega.z());
  const auto k = detail::so3_coeffs(theta);
  const Mat3 W = skew(xi.omega);
  const Mat3 V = Mat3::Identity() + k.b * W + k.c * W * W;
  return {q, V * xi.v};
}

inline Twist se3_log(const Pose& T) {
  Eigen::Quaterniond q = T.rotation.normalized();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const double s = q.vec().norm();
  double scale;  // theta / s
  if (s < 1e-8) {
    scale = 2.0 / q.w() * (1.0 - s * s / (3.0 * q.w() * q.w()));
  } else {
    scale = 2.0 * std::atan2(s, q.w()) / s;
  }
  const Vec3 omega = scale * q.vec();
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  double d;
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    const auto k = detail::so3_coeffs(theta);
    d = (1.0 - k.a / (2.0 * k.b)) / (theta * theta);
  }
  const Mat3 Vinv = Mat3::Identity() - 0.5 * W + d * W * W;
  return {omega, Vinv * T.translation};
}

// ---------------------------------------------------------------------------
// Camera model
// ---------------------------------------------------------------------------

// Equidistant polynomial fisheye: r = d(theta) = theta + k1 th^3 + k2 th^5 + k3 th^7 + k4 th^9,
// u = fx r cos(psi) + cx, v = fy r sin(psi) + cy. Valid for incidence angles up to theta_max,
// which may exceed pi/2.
class CameraIntrinsics {
 public:
  CameraIntrinsics(double fx, double fy, double cx, double cy, std::array<double, 4> k, int width,
                   int height, double theta_max)
      : fx_(fx), fy_(fy), cx_(cx), cy_(cy), k_(k), width_(width), height_(height), theta_max_(theta_max) {
    validate();
  }

  double fx() const { return fx_; }
  double fy() const { return fy_; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  const std::array<double, 4>& k() const { return k_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double theta_max() const { return theta_max_; }

  // [fx, fy, cx, cy, k1..k4]: the optimizable block.
  Vec8 params() const {
    Vec8 p;
    p << fx_, fy_, cx_, cy_, k_[0], k_[1], k_[2], k_[3];
    return p;
  }

  CameraIntrinsics with_params(const Vec8& p) const {
    return {p[0], p[1], p[2], p[3], {p[4], p[5], p[6], p[7]}, width_, height_, theta_max_};
  }

  double distort(double theta) const {
    const double t2 = theta * theta;
    return theta * (1.0 + t2 * (k_[0] + t2 * (k_[1] + t2 * (k_[2] + t2 * k_[3]))));
  }

  double distort_derivative(double theta) const {
    const double t2 = theta * theta;
    return 1.0 + t2 * (3.0 * k_[0] + t2 * (5.0 * k_[1] + t2 * (7.0 * k_[2] + t2 * 9.0 * k_[3])));
  }

  bool operator==(const CameraIntrinsics&) const = default;

 private:
  void validate() const {
    if (!(fx_ > 0) || !(fy_ > 0)) throw InvalidIntrinsics("focal lengths must be positive");
    if (!(theta_max_ > 0) || theta_max_ > kPi) throw InvalidIntrinsics("theta_max must lie in (0, pi]");
    if (width_ <= 0 || height_ <= 0) throw InvalidIntrinsics("image size must be positive");
    if (!std::isfinite(cx_) || !std::isfinite(cy_)) throw InvalidIntrinsics("principal point not finite");
    for (double c : k_)
      if (!std::isfinite(c)) throw InvalidIntrinsics("distortion coefficient not finite");
    double prev = distort(0.0), prev_th = 0.0;
    const int steps = static_cast<int>(std::ceil(theta_max_ / 1e-3));
    for (int i = 1; i <= steps; ++i) {
      const double th = std::min(theta_max_, i * 1e-3);
      if (th - prev_th < 1e-9) continue;
      prev_th = th;
      const double d = distort(th);
      if (!(d > prev)) throw InvalidIntrinsics("distortion polynomial not strictly increasing");
      prev = d;
    }
  }

  double fx_, fy_, cx_, cy_;
  std::array<double, 4> k_;
  int width_, height_;
  double theta_max_;
};

struct Projection {
  Vec2 pixel = Vec2::Zero();
  bool valid = false;
};

inline bool in_image(const CameraIntrinsics& intr, const Vec2& px) {
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= intr.width() - 1.0 && px.y() <= intr.height() - 1.0;
}

// Projects ignoring image bounds; nullopt when the incidence angle exceeds theta_max.
inline std::optional<Vec2> project_unbounded(const CameraIntrinsics& intr, const Vec3& p) {
  const double rho = std::hypot(p.x(), p.y());
  if (rho == 0.0 && p.z() <= 0.0) return std::nullopt;
  const double theta = std::atan2(rho, p.z());
  if (theta > intr.theta_max()) return std::nullopt;
  const double r = intr.distort(theta);
  const double c = rho > 0 ? p.x() / rho : 1.0;
  const double s = rho > 0 ? p.y() / rho : 0.0;
  return Vec2(intr.fx() * r * c + intr.cx(), intr.fy() * r * s + intr.cy());
}

inline Projection project(const CameraIntrinsics& intr, const Vec3& p_cam) {
  Projection out;
  if (auto px = project_unbounded(intr, p_cam)) {
    out.pixel = *px;
    out.valid = in_image(intr, *px);
  }
  return out;
}

// Inverse projection; nullopt when the pixel lies beyond theta_max or Newton fails.
inline std::optional<Vec3> try_unproject(const CameraIntrinsics& intr, const Vec2& px) {
  const double mx = (px.x() - intr.cx()) / intr.fx();
  const double my = (px.y() - intr.cy()) / intr.fy();
  const double r = std::hypot(mx, my);
  if (r == 0.0) return Vec3(0, 0, 1);
  if (r > intr.distort(intr.theta_max())) return std::nullopt;

  double theta = std::hypot(px.x() - intr.cx(), px.y() - intr.cy()) / std::sqrt(intr.fx() * intr.fy());
  bool converged = false;
  for (int it = 0; it < 20; ++it) {
    const double step = (intr.distort(theta) - r) / intr.distort_derivative(theta);
    theta -= step;
    if (std::abs(step) < 1e-12) {
      converged = true;
      break;
    }
  }
  if (!converged || !std::isfinite(theta) || theta < 0.0 || theta > intr.theta_max()) return std::nullopt;
  const double st = std::sin(theta);
  return Vec3(st * mx / r, st * my / r, std::cos(theta));
}

inline Vec3 unproject(const CameraIntrinsics& intr, const Vec2& px) {
  if (auto ray = try_unproject(intr, px)) return *ray;
  throw NoConvergence("pixel (" + std::to_string(px.x()) + ", " + std::to_string(px.y()) +
                      ") has no incidence angle within theta_max");
}

// Jacobian of the pixel w.r.t. the camera-frame point (2x3); requires theta <= theta_max.
inline Eigen::Matrix<double, 2, 3> project_point_jacobian(const CameraIntrinsics& intr, const Vec3& p) {
  Eigen::Matrix<double, 2, 3> J;
  const double x = p.x(), y = p.y(), z = p.z();
  const double rho2 = x * x + y * y;
  const double rho = std::sqrt(rho2);
  if (rho < 1e-12 * std::max(1.0, std::abs(z))) {
    // On-axis limit (z > 0): d(theta)/rho -> 1/z.
    J << intr.fx() / z, 0, 0, 0, intr.fy() / z, 0;
    return J;
  }
  const double r2 = rho2 + z * z;
  const double theta = std::atan2(rho, z);
  const double d = intr.distort(theta);
  const double dd = intr.distort_derivative(theta);
  const double g = d / rho;
  // gradients of g = d(theta)/rho
  const double common = dd * z / (rho2 * r2) - d / (rho2 * rho);
  const double gx = common * x;
  const double gy = common * y;
  const double gz = -dd / r2;
  J(0, 0) = intr.fx() * (g + x * gx);
  J(0, 1) = intr.fx() * x * gy;
  J(0, 2) = intr.fx() * x * gz;
  J(1, 0) = intr.fy() * y * gx;
  J(1, 1) = intr.fy() * (g + y * gy);
  J(1, 2) = intr.fy() * y * gz;
  return J;
}

inline constexpr int kNumParams = 14;
using ProjJacobian = Eigen::Matrix<double, 2, kNumParams>;

// d pixel / d [omega(3), v(3), fx, fy, cx, cy, k1..k4] for the right-multiplicative
// update T_CL <- T_CL * exp(xi), evaluated at xi = 0.
inline ProjJacobian project_jacobian(const CameraIntrinsics& intr, const Pose& T_CL, const Vec3& p_lidar) {
  const Vec3 p = T_CL.apply(p_lidar);
  if (!project(intr, p).valid) throw InvalidPoint("point does not project into the image");
  ProjJacobian J;
  const Mat3 R = T_CL.R();
  const Eigen::Matrix<double, 2, 3> Jp = project_point_jacobian(intr, p);
  J.block<2, 3>(0, 0) = Jp * (-R * skew(p_lidar));
  J.block<2, 3>(0, 3) = Jp * R;

  const double rho = std::hypot(p.x(), p.y());
  const double theta = std::atan2(rho, p.z());
  const double c = rho > 0 ? p.x() / rho : 1.0;
  const double s = rho > 0 ? p.y() / rho : 0.0;
  const double d = intr.distort(theta);
  J(0, 6) = d * c;
  J(1, 6) = 0;
  J(0, 7) = 0;
  J(1, 7) = d * s;
  J(0, 8) = 1;
  J(1, 8) = 0;
  J(0, 9) = 0;
  J(1, 9) = 1;
  double th_pow = theta * theta * theta;
  for (int j = 0; j < 4; ++j) {
    J(0, 10 + j) = intr.fx() * th_pow * c;
    J(1, 10 + j) = intr.fy() * th_pow * s;
    th_pow *= theta * theta;
  }
  return J;
}

}  // namespace hycal
