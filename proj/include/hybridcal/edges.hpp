#pragma once

// Edge extraction on both sensors: Canny-style image edges with an exact
// Euclidean distance transform, and reflectivity edges of the LiDAR cloud
// rasterized on an azimuth/elevation grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "hybridcal/cloud.hpp"
#include "hybridcal/error.hpp"
#include "hybridcal/geom.hpp"
#include "hybridcal/image.hpp"
#include "hybridcal/parallel.hpp"

namespace hycal {

struct EdgeMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;

  EdgeMap() = default;
  EdgeMap(int w, int h) : width(w), height(h), mask(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) { mask[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
};

// ---------------------------------------------------------------------------
// Image gradients and Canny
// ---------------------------------------------------------------------------

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= sum;

  GrayImage tmp(img.width, img.height), out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * img.clamped(x + i, y);
      tmp.at(x, y) = s;
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * tmp.clamped(x, y + i);
      out.at(x, y) = s;
    }
  return out;
}

struct Gradients {
  GrayImage gx, gy, magnitude;
};

// Sobel gradients scaled by 1/8 (units: intensity per pixel), border-replicated.
inline Gradients sobel(const GrayImage& img) {
  Gradients g{GrayImage(img.width, img.height), GrayImage(img.width, img.height), GrayImage(img.width, img.height)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double a = img.clamped(x - 1, y - 1), b = img.clamped(x, y - 1), c = img.clamped(x + 1, y - 1);
      const double d = img.clamped(x - 1, y), f = img.clamped(x + 1, y);
      const double h = img.clamped(x - 1, y + 1), i = img.clamped(x, y + 1), j = img.clamped(x + 1, y + 1);
      const double gx = ((c + 2 * f + j) - (a + 2 * d + h)) / 8.0;
      const double gy = ((h + 2 * i + j) - (a + 2 * b + c)) / 8.0;
      g.gx.at(x, y) = gx;
      g.gy.at(x, y) = gy;
      g.magnitude.at(x, y) = std::hypot(gx, gy);
    }
  return g;
}

struct CannyParams {
  double sigma = 1.4;
  double low = 0.04;
  double high = 0.10;
  bool relative = true;  // thresholds as fractions of the maximum gradient magnitude
};

inline EdgeMap detect_image_edges(const GrayImage& img, const CannyParams& params = {}) {
  if (!(params.low < params.high) || params.sigma < 0) throw InvalidStage("Canny needs t_low < t_high and sigma >= 0");
  EdgeMap edges(img.width, img.height);
  if (img.width == 0 || img.height == 0) return edges;
  const Gradients g = sobel(gaussian_blur(img, params.sigma));
  const double max_mag = *std::max_element(g.magnitude.data.begin(), g.magnitude.data.end());
  if (max_mag <= 0) return edges;
  const double lo = params.relative ? params.low * max_mag : params.low;
  const double hi = params.relative ? params.high * max_mag : params.high;

  // Non-maximum suppression along the gradient direction, quantized to 8 sectors.
  static constexpr int kDx[4] = {1, 1, 0, -1};
  static constexpr int kDy[4] = {0, 1, 1, 1};
  std::vector<std::uint8_t> cls(img.data.size(), 0);  // 0 none, 1 weak, 2 strong
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double m = g.magnitude.at(x, y);
      if (m < lo || m <= 0) continue;
      const double angle = std::atan2(g.gy.at(x, y), g.gx.at(x, y));
      const int sector = (static_cast<int>(std::lround(angle / (kPi / 4))) % 8 + 8) % 8;
      const int dx = kDx[sector % 4], dy = kDy[sector % 4];
      const double back = g.magnitude.clamped(x - dx, y - dy);
      const double fwd = g.magnitude.clamped(x + dx, y + dy);
      if (m >= back && m > fwd) cls[static_cast<std::size_t>(y) * img.width + x] = m >= hi ? 2 : 1;
    }

  // Hysteresis: grow from strong pixels through 8-connected weak ones.
  std::vector<int> stack;
  for (std::size_t i = 0; i < cls.size(); ++i)
    if (cls[i] == 2) {
      edges.mask[i] = 1;
      stack.push_back(static_cast<int>(i));
    }
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    const int x = i % img.width, y = i / img.width;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= img.width || ny >= img.height) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * img.width + nx;
        if (cls[j] != 0 && !edges.mask[j]) {
          edges.mask[j] = 1;
          stack.push_back(static_cast<int>(j));
        }
      }
  }
  return edges;
}

// ---------------------------------------------------------------------------
// Distance transform
// ---------------------------------------------------------------------------

struct FieldSample {
  double value;
  double du;
  double dv;
};

// Exact Euclidean distance (in pixels) to the nearest edge pixel center, plus a
// central-difference gradient field.
struct DistanceField {
  int width = 0;
  int height = 0;
  std::vector<double> d;
  std::vector<double> grad_u;
  std::vector<double> grad_v;
  double max_value = 0;

  double at(int x, int y) const { return d[static_cast<std::size_t>(y) * width + x]; }

  bool contains(double u, double v) const { return u >= 0 && v >= 0 && u <= width - 1 && v <= height - 1; }

  // Bilinear interpolation and its exact partial derivatives.
  std::optional<FieldSample> sample(double u, double v) const {
    if (!contains(u, v)) return std::nullopt;
    const int x0 = std::min(static_cast<int>(std::floor(u)), std::max(0, width - 2));
    const int y0 = std::min(static_cast<int>(std::floor(v)), std::max(0, height - 2));
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const double fx = u - x0, fy = v - y0;
    const double d00 = at(x0, y0), d10 = at(x1, y0), d01 = at(x0, y1), d11 = at(x1, y1);
    FieldSample s;
    s.value = (1 - fy) * ((1 - fx) * d00 + fx * d10) + fy * ((1 - fx) * d01 + fx * d11);
    s.du = x1 == x0 ? 0.0 : (1 - fy) * (d10 - d00) + fy * (d11 - d01);
    s.dv = y1 == y0 ? 0.0 : (1 - fx) * (d01 - d00) + fx * (d11 - d10);
    return s;
  }

  // Bilinear interpolation of the precomputed central-difference gradient.
  Vec2 smooth_gradient(double u, double v) const {
    const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, std::max(0, width - 2));
    const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, std::max(0, height - 2));
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const double fx = std::clamp(u - x0, 0.0, 1.0), fy = std::clamp(v - y0, 0.0, 1.0);
    auto lerp2 = [&](const std::vector<double>& g) {
      auto G = [&](int x, int y) { return g[static_cast<std::size_t>(y) * width + x]; };
      return (1 - fy) * ((1 - fx) * G(x0, y0) + fx * G(x1, y0)) + fy * ((1 - fx) * G(x0, y1) + fx * G(x1, y1));
    };
    return {lerp2(grad_u), lerp2(grad_v)};
  }
};

namespace detail {

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
inline void edt_1d(const double* f, double* out, int n, std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int q, int p) {
    return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * q - 2.0 * p);
  };
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    out[q] = dq * dq + f[v[k]];
  }
}

}  // namespace detail

inline DistanceField distance_transform(const EdgeMap& edges) {
  if (edges.count() == 0) throw NoEdges("distance transform needs at least one edge pixel");
  const int w = edges.width, h = edges.height;
  const double inf = 4.0 * (static_cast<double>(w) * w + static_cast<double>(h) * h) + 1.0;
  std::vector<double> sq(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = edges.mask[i] ? 0.0 : inf;

  std::vector<int> v;
  std::vector<double> z, col_in(h), col_out(h), row_out(w);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col_in[y] = sq[static_cast<std::size_t>(y) * w + x];
    detail::edt_1d(col_in.data(), col_out.data(), h, v, z);
    for (int y = 0; y < h; ++y) sq[static_cast<std::size_t>(y) * w + x] = col_out[y];
  }
  for (int y = 0; y < h; ++y) {
    double* row = sq.data() + static_cast<std::size_t>(y) * w;
    detail::edt_1d(row, row_out.data(), w, v, z);
    std::copy(row_out.begin(), row_out.end(), row);
  }

  DistanceField df;
  df.width = w;
  df.height = h;
  df.d.resize(sq.size());
  for (std::size_t i = 0; i < sq.size(); ++i) df.d[i] = std::sqrt(sq[i]);
  df.max_value = *std::max_element(df.d.begin(), df.d.end());
  df.grad_u.assign(sq.size(), 0.0);
  df.grad_v.assign(sq.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (w > 1) {
        const int xl = std::max(0, x - 1), xr = std::min(w - 1, x + 1);
        df.grad_u[i] = (df.at(xr, y) - df.at(xl, y)) / (xr - xl);
      }
      if (h > 1) {
        const int yt = std::max(0, y - 1), yb = std::min(h - 1, y + 1);
        df.grad_v[i] = (df.at(x, yb) - df.at(x, yt)) / (yb - yt);
      }
    }
  return df;
}

// ---------------------------------------------------------------------------
// LiDAR side: spherical rasterization and reflectivity edges
// ---------------------------------------------------------------------------

struct SphericalCell {
  double min_range = std::numeric_limits<double>::infinity();
  double reflectivity = 0;  // mean
  int count = 0;
  Vec3 centroid = Vec3::Zero();
  bool empty() const { return count == 0; }
};

// Azimuth in [-pi, pi) across columns, elevation in [-pi/2, pi/2] across rows.
struct SphericalImage {
  int n_az = 0;
  int n_el = 0;
  std::vector<SphericalCell> cells;

  const SphericalCell& at(int az, int el) const { return cells[static_cast<std::size_t>(el) * n_az + az]; }
  SphericalCell& at(int az, int el) { return cells[static_cast<std::size_t>(el) * n_az + az]; }

  std::pair<int, int> bin(const Vec3& p) const {
    const double az = std::atan2(p.y(), p.x());
    const double el = std::asin(std::clamp(p.z() / p.norm(), -1.0, 1.0));
    int ia = static_cast<int>(std::floor((az + kPi) / (2 * kPi) * n_az));
    if (ia >= n_az) ia -= n_az;
    if (ia < 0) ia = 0;
    const int ie = std::clamp(static_cast<int>(std::floor((el + kPi / 2) / kPi * n_el)), 0, n_el - 1);
    return {ia, ie};
  }
};

inline SphericalImage build_spherical_image(const ReflectivityCloud& cloud, int n_az, int n_el) {
  if (cloud.empty()) throw EmptyCloud("spherical image needs a non-empty cloud");
  if (n_az < 1 || n_el < 1) throw InvalidStage("spherical grid needs positive bin counts");
  SphericalImage sph{n_az, n_el, std::vector<SphericalCell>(static_cast<std::size_t>(n_az) * n_el)};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const double r = p.norm();
    if (!(r > 0)) continue;
    const auto [ia, ie] = sph.bin(p);
    auto& c = sph.at(ia, ie);
    c.min_range = std::min(c.min_range, r);
    c.reflectivity += cloud.reflectivity[i];
    c.centroid += p;
    ++c.count;
  }
  for (auto& c : sph.cells)
    if (c.count > 0) {
      c.reflectivity /= c.count;
      c.centroid /= c.count;
    }
  return sph;
}

struct LidarEdge {
  Vec3 point;
  double weight;
};

struct LidarEdgeParams {
  int n_az = 1000;
  int n_el = 500;
  double g_min = 0.1;          // reflectivity Sobel magnitude (per cell, /8-normalized)
  double depth_rel_max = 0.1;  // (max-min)/min of the 3x3 min ranges
  int min_count = 1;
};

inline std::vector<LidarEdge> extract_lidar_edges(const SphericalImage& sph, double g_min, double depth_rel_max,
                                                  int min_count) {
  std::vector<LidarEdge> out;
  if (sph.n_az < 3) return out;
  for (int ie = 1; ie + 1 < sph.n_el; ++ie)
    for (int ia = 0; ia < sph.n_az; ++ia) {
      const auto& c = sph.at(ia, ie);
      if (c.count < min_count) continue;
      double r[3][3];
      double lo = std::numeric_limits<double>::infinity(), hi = 0;
      bool complete = true;
      for (int dy = -1; dy <= 1 && complete; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto& n = sph.at((ia + dx + sph.n_az) % sph.n_az, ie + dy);
          if (n.empty()) {
            complete = false;
            break;
          }
          r[dy + 1][dx + 1] = n.reflectivity;
          lo = std::min(lo, n.min_range);
          hi = std::max(hi, n.min_range);
        }
      if (!complete) continue;
      const double gx = ((r[0][2] + 2 * r[1][2] + r[2][2]) - (r[0][0] + 2 * r[1][0] + r[2][0])) / 8.0;
      const double gy = ((r[2][0] + 2 * r[2][1] + r[2][2]) - (r[0][0] + 2 * r[0][1] + r[0][2])) / 8.0;
      const double g = std::hypot(gx, gy);
      if (g < g_min) continue;
      if ((hi - lo) / lo > depth_rel_max) continue;
      out.push_back({c.centroid, g});
    }
  return out;
}

inline std::vector<LidarEdge> extract_lidar_edges(const SphericalImage& sph, const LidarEdgeParams& p) {
  return extract_lidar_edges(sph, p.g_min, p.depth_rel_max, p.min_count);
}

// Rotation that carries the mean viewing direction of the cloud onto +x, so a
// forward-looking scan sits on the equator of the spherical grid.
inline Eigen::Quaterniond equator_alignment(const ReflectivityCloud& cloud) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : cloud.points) {
    const double n = p.norm();
    if (n > 0) mean += p / n;
  }
  if (mean.norm() < 1e-9) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond::FromTwoVectors(mean.normalized(), Vec3::UnitX());
}

// LiDAR edge points in the cloud's own frame.
inline std::vector<LidarEdge> lidar_edges_from_cloud(const ReflectivityCloud& cloud, const LidarEdgeParams& p) {
  if (cloud.empty()) throw EmptyCloud("no LiDAR points");
  const Eigen::Quaterniond q = equator_alignment(cloud);
  const Pose align(q, Vec3::Zero());
  auto edges = extract_lidar_edges(build_spherical_image(transform_cloud(cloud, align), p.n_az, p.n_el), p);
  const Eigen::Quaterniond qi = q.conjugate();
  for (auto& e : edges) e.point = qi * e.point;
  return edges;
}

// ---------------------------------------------------------------------------
// Debug rasters
// ---------------------------------------------------------------------------

inline GrayImage edge_mask_image(const EdgeMap& e) {
  GrayImage img(e.width, e.height);
  for (std::size_t i = 0; i < e.mask.size(); ++i) img.data[i] = e.mask[i] ? 1.0 : 0.0;
  return img;
}

// Field scaled into [0,1] by 1/scale; scale = field maximum (recorded by the caller).
inline GrayImage distance_field_image(const DistanceField& df, double scale) {
  GrayImage img(df.width, df.height);
  for (std::size_t i = 0; i < df.d.size(); ++i) img.data[i] = scale > 0 ? std::min(1.0, df.d[i] / scale) : 0.0;
  return img;
}

// Reflectivity raster with elevation increasing upward; empty cells are black.
inline GrayImage spherical_reflectivity_image(const SphericalImage& sph) {
  GrayImage img(sph.n_az, sph.n_el);
  for (int ie = 0; ie < sph.n_el; ++ie)
    for (int ia = 0; ia < sph.n_az; ++ia) img.at(ia, sph.n_el - 1 - ie) = sph.at(ia, ie).reflectivity;
  return img;
}

}  // namespace hycal
