#pragma once

// Mutual-information extrinsic calibration baseline: joint histogram of image
// intensity vs. LiDAR reflectivity at projected points, maximized over the
// 6-DoF extrinsic with Nelder-Mead.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "hybridcal/cloud.hpp"
#include "hybridcal/error.hpp"
#include "hybridcal/geom.hpp"
#include "hybridcal/image.hpp"
#include "hybridcal/parallel.hpp"

namespace hycal {

// counts[x * n + y]: x = grayscale bin, y = reflectivity bin.
struct JointHistogram {
  int n = 64;
  std::vector<double> counts;
  double total = 0;

  explicit JointHistogram(int bins = 64) : n(bins), counts(static_cast<std::size_t>(bins) * bins, 0.0) {}
  double& at(int x, int y) { return counts[static_cast<std::size_t>(x) * n + y]; }
  double at(int x, int y) const { return counts[static_cast<std::size_t>(x) * n + y]; }

  void add(int x, int y, double w = 1.0) {
    at(x, y) += w;
    total += w;
  }
};

inline int histogram_bin(double value, int n) {
  return std::clamp(static_cast<int>(std::floor(value * n)), 0, n - 1);
}

inline JointHistogram joint_histogram(const ReflectivityCloud& cloud, const GrayImage& image,
                                      const CameraIntrinsics& intr, const Pose& extr, int n_bins = 64,
                                      std::size_t stride = 1) {
  if (n_bins < 1) throw InvalidStage("histogram needs at least one bin");
  stride = std::max<std::size_t>(stride, 1);
  const std::size_t m = (cloud.size() + stride - 1) / stride;
  std::vector<int> bins(m, -1);
  parallel_for(m, [&](std::size_t j) {
    const std::size_t i = j * stride;
    const Projection proj = project(intr, extr.apply(cloud.points[i]));
    if (!proj.valid) return;
    const double g = sample_bilinear(image, proj.pixel.x(), proj.pixel.y());
    bins[j] = histogram_bin(g, n_bins) * n_bins + histogram_bin(cloud.reflectivity[i], n_bins);
  });
  JointHistogram h(n_bins);
  for (int b : bins)
    if (b >= 0) {
      h.counts[static_cast<std::size_t>(b)] += 1.0;
      h.total += 1.0;
    }
  if (h.total == 0) throw NoValidProjections("no LiDAR point projects into the image");
  return h;
}

// Separable Gaussian smoothing of the histogram, sigma in bins (mass preserving).
inline JointHistogram smooth_histogram(const JointHistogram& h, double sigma) {
  if (sigma <= 0) return h;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  JointHistogram tmp(h.n), out(h.n);
  auto pass = [&](const JointHistogram& in, JointHistogram& o, bool along_x) {
    for (int x = 0; x < h.n; ++x)
      for (int y = 0; y < h.n; ++y) {
        const double c = in.at(x, y);
        if (c == 0) continue;
        double norm = 0;
        for (int i = -r; i <= r; ++i) {
          const int t = (along_x ? x : y) + i;
          if (t >= 0 && t < h.n) norm += k[i + r];
        }
        for (int i = -r; i <= r; ++i) {
          const int t = (along_x ? x : y) + i;
          if (t < 0 || t >= h.n) continue;
          (along_x ? o.at(t, y) : o.at(x, t)) += c * k[i + r] / norm;
        }
      }
  };
  pass(h, tmp, true);
  pass(tmp, out, false);
  out.total = h.total;
  return out;
}

// MI in bits over the non-zero cells.
inline double mutual_information(const JointHistogram& h) {
  if (!(h.total > 0)) throw EmptyHistogram("histogram has no samples");
  std::vector<double> px(h.n, 0.0), py(h.n, 0.0);
  for (int x = 0; x < h.n; ++x)
    for (int y = 0; y < h.n; ++y) {
      px[x] += h.at(x, y);
      py[y] += h.at(x, y);
    }
  double mi = 0;
  for (int x = 0; x < h.n; ++x)
    for (int y = 0; y < h.n; ++y) {
      const double c = h.at(x, y);
      if (c <= 0) continue;
      // p(x,y) log2( p(x,y) / (p(x) p(y)) ) with p = count / total
      mi += c / h.total * std::log2(c * h.total / (px[x] * py[y]));
    }
  return std::max(0.0, mi);
}

inline double marginal_entropy(const JointHistogram& h, bool gray_axis) {
  double e = 0;
  for (int a = 0; a < h.n; ++a) {
    double m = 0;
    for (int b = 0; b < h.n; ++b) m += gray_axis ? h.at(a, b) : h.at(b, a);
    if (m > 0) e -= m / h.total * std::log2(m / h.total);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Nelder-Mead
// ---------------------------------------------------------------------------

struct NelderMeadResult {
  Vec6 x;
  double f;
  int evaluations;
  std::vector<double> best_trace;  // best value after each iteration
};

template <typename F>
NelderMeadResult nelder_mead(F&& f, const Vec6& x0, const Vec6& scale, double spread_tol, int max_evals) {
  constexpr int n = 6;
  std::array<Vec6, n + 1> pts;
  std::array<double, n + 1> val;
  int evals = 0;
  auto eval = [&](const Vec6& x) {
    ++evals;
    return f(x);
  };
  pts[0] = x0;
  val[0] = eval(x0);
  for (int i = 0; i < n; ++i) {
    pts[i + 1] = x0;
    pts[i + 1][i] += scale[i];
    val[i + 1] = eval(pts[i + 1]);
  }
  NelderMeadResult res{x0, val[0], 0, {}};
  std::array<int, n + 1> order;
  for (;;) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return val[a] < val[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];
    res.best_trace.push_back(val[best]);
    if (val[worst] - val[best] < spread_tol || evals >= max_evals) break;

    Vec6 centroid = Vec6::Zero();
    for (int i = 0; i < n; ++i) centroid += pts[order[i]];
    centroid /= n;
    const Vec6 xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < val[best]) {
      const Vec6 xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
    } else if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
    } else {
      const bool outside = fr < val[worst];
      const Vec6 xc = outside ? Vec6(centroid + 0.5 * (xr - centroid)) : Vec6(centroid + 0.5 * (pts[worst] - centroid));
      const double fc = eval(xc);
      if (fc < (outside ? fr : val[worst])) {
        pts[worst] = xc;
        val[worst] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          const int k = order[i];
          pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
          val[k] = eval(pts[k]);
        }
      }
    }
  }
  const int best = static_cast<int>(std::min_element(val.begin(), val.end()) - val.begin());
  res.x = pts[best];
  res.f = val[best];
  res.evaluations = evals;
  return res;
}

// ---------------------------------------------------------------------------
// MI calibration
// ---------------------------------------------------------------------------

struct MiOptions {
  int bins = 64;
  double rot_step = deg2rad(0.5);  // initial simplex scale
  double trans_step = 0.005;
  double spread_tol = 1e-6;  // bits
  int max_evals = 500;
  std::size_t max_points = 100000;  // deterministic stride subsampling above this
  double smoothing_sigma = 0.0;     // histogram smoothing in bins (0 = off)
};

struct MiResult {
  Pose extr;
  double mi = 0;
  std::vector<double> trace;  // best MI per Nelder-Mead iteration
  int evaluations = 0;
};

inline std::size_t mi_stride(const ReflectivityCloud& cloud, const MiOptions& opt) {
  return opt.max_points == 0 ? 1 : std::max<std::size_t>(1, (cloud.size() + opt.max_points - 1) / opt.max_points);
}

inline double mi_at(const ReflectivityCloud& cloud, const GrayImage& image, const CameraIntrinsics& intr,
                    const Pose& extr, const MiOptions& opt) {
  const JointHistogram h = joint_histogram(cloud, image, intr, extr, opt.bins, mi_stride(cloud, opt));
  return mutual_information(smooth_histogram(h, opt.smoothing_sigma));
}

inline MiResult mi_calibrate(const ReflectivityCloud& cloud, const GrayImage& image, const CameraIntrinsics& intr,
                             const Pose& init_extr, const MiOptions& opt = {}) {
  mi_at(cloud, image, intr, init_extr, opt);  // surfaces NoValidProjections for a hopeless start
  auto objective = [&](const Vec6& xi) {
    try {
      return -mi_at(cloud, image, intr, init_extr * se3_exp(Twist(xi)), opt);
    } catch (const NoValidProjections&) {
      return 0.0;
    }
  };
  Vec6 scale;
  scale << Vec3::Constant(opt.rot_step), Vec3::Constant(opt.trans_step);
  const auto nm = nelder_mead(objective, Vec6::Zero(), scale, opt.spread_tol, opt.max_evals);
  MiResult r;
  r.extr = init_extr * se3_exp(Twist(nm.x));
  r.mi = -nm.f;
  r.evaluations = nm.evaluations;
  for (double v : nm.best_trace) r.trace.push_back(-v);
  return r;
}

// MI along one twist axis (0-2 rotation, radians; 3-5 translation, meters) around extr.
inline std::vector<std::pair<double, double>> mi_sweep(const ReflectivityCloud& cloud, const GrayImage& image,
                                                       const CameraIntrinsics& intr, const Pose& extr, int axis,
                                                       double half_range, int steps, const MiOptions& opt = {}) {
  std::vector<std::pair<double, double>> out;
  for (int i = 0; i < steps; ++i) {
    const double off = steps == 1 ? 0.0 : -half_range + 2.0 * half_range * i / (steps - 1);
    Vec6 xi = Vec6::Zero();
    xi[axis] = off;
    double mi = 0;
    try {
      mi = mi_at(cloud, image, intr, extr * se3_exp(Twist(xi)), opt);
    } catch (const NoValidProjections&) {
    }
    out.emplace_back(off, mi);
  }
  return out;
}

}  // namespace hycal
