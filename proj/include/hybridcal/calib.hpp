#pragma once

// Targetless camera/LiDAR co-calibration: LiDAR reflectivity edges are
// projected through the current extrinsic and intrinsics and pulled onto
// image edges by minimizing a Huber-robustified chamfer cost over a distance
// field pyramid with staged Levenberg-Marquardt.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hybridcal/edges.hpp"
#include "hybridcal/error.hpp"
#include "hybridcal/geom.hpp"
#include "hybridcal/image.hpp"
#include "hybridcal/parallel.hpp"

namespace hycal {

enum FreeParam : unsigned {
  kRot = 1u << 0,
  kTrans = 1u << 1,
  kFocal = 1u << 2,
  kPrincipal = 1u << 3,
  kDistortion = 1u << 4,
  kAllParams = kRot | kTrans | kFocal | kPrincipal | kDistortion,
};

// Column indices of the 14-vector [omega, v, fx, fy, cx, cy, k1..k4] unlocked by a mask.
inline std::vector<int> free_columns(unsigned mask) {
  std::vector<int> cols;
  auto add = [&](int b, int e) {
    for (int i = b; i < e; ++i) cols.push_back(i);
  };
  if (mask & kRot) add(0, 3);
  if (mask & kTrans) add(3, 6);
  if (mask & kFocal) add(6, 8);
  if (mask & kPrincipal) add(8, 10);
  if (mask & kDistortion) add(10, 14);
  return cols;
}

struct Stage {
  int pyramid_level = 0;
  unsigned free_params = kRot;
  int max_iters = 50;
  double huber_delta = 2.0;  // in pixels of the stage's pyramid level
};

// Exhaustive rotation grid evaluated on the coarsest level before the first
// stage. The periodic textures of indoor scenes alias the chamfer cost, so a
// few degrees of initial error can otherwise settle in a neighboring valley.
struct RotationSearch {
  int half_steps = 2;            // grid is (2*half_steps+1)^3; 0 disables
  double step = deg2rad(1.5);    // radians
};

struct CalibProblem {
  std::vector<LidarEdge> lidar_edges;
  std::vector<DistanceField> dt_pyramid;  // level 0 = full resolution
  CameraIntrinsics init_intr;
  Pose init_extr;
  std::vector<Stage> schedule;  // empty: default schedule
  RotationSearch search;
};

struct CalibParams {
  CameraIntrinsics intr;
  Pose extr;
};

inline double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

// Full-resolution pixel -> pixel of pyramid level L (2x2 box decimation per level).
inline Vec2 to_level(const Vec2& px, int level) {
  const double s = std::ldexp(1.0, -level);
  return {(px.x() + 0.5) * s - 0.5, (px.y() + 0.5) * s - 0.5};
}

struct EdgeCost {
  double cost = 0;
  std::vector<double> residuals;  // distance-field value per edge point, level pixels
  std::vector<std::uint8_t> valid;
  Eigen::Matrix<double, Eigen::Dynamic, kNumParams, Eigen::RowMajor> jacobian;  // d residual / d params
  std::size_t valid_count = 0;
};

// cost = sum_i w_i * huber(D_level(pi(T * p_i)), delta). Points that project
// invalid or outside the field take the field maximum with a zero Jacobian row.
inline EdgeCost edge_cost(const CameraIntrinsics& intr, const Pose& extr, const CalibProblem& problem, int level,
                          double delta, unsigned free_mask = kAllParams, bool with_jacobian = true) {
  if (level < 0 || level >= static_cast<int>(problem.dt_pyramid.size()))
    throw InvalidStage("pyramid level " + std::to_string(level) + " does not exist");
  const DistanceField& field = problem.dt_pyramid[level];
  const std::size_t n = problem.lidar_edges.size();
  const double scale = std::ldexp(1.0, -level);

  EdgeCost out;
  out.residuals.assign(n, field.max_value);
  out.valid.assign(n, 0);
  if (with_jacobian) out.jacobian.setZero(static_cast<Eigen::Index>(n), kNumParams);

  bool column_free[kNumParams] = {};
  for (int c : free_columns(free_mask)) column_free[c] = true;

  parallel_for(n, [&](std::size_t i) {
    const Vec3& p = problem.lidar_edges[i].point;
    const Projection proj = project(intr, extr.apply(p));
    if (!proj.valid) return;
    const Vec2 q = to_level(proj.pixel, level);
    const auto s = field.sample(q.x(), q.y());
    if (!s) return;
    out.residuals[i] = s->value;
    out.valid[i] = 1;
    if (!with_jacobian) return;
    const ProjJacobian J = project_jacobian(intr, extr, p);
    const Eigen::RowVector2d g(s->du * scale, s->dv * scale);
    Eigen::Matrix<double, 1, kNumParams> row = g * J;
    for (int c = 0; c < kNumParams; ++c)
      if (!column_free[c]) row[c] = 0.0;
    out.jacobian.row(static_cast<Eigen::Index>(i)) = row;
  }, 512);

  for (std::size_t i = 0; i < n; ++i) {
    out.cost += problem.lidar_edges[i].weight * huber(out.residuals[i], delta);
    out.valid_count += out.valid[i];
  }
  if (out.valid_count == 0) throw NoValidProjections("no LiDAR edge point projects into the distance field");
  return out;
}

struct NormalEquations {
  Eigen::Matrix<double, kNumParams, kNumParams> H = Eigen::Matrix<double, kNumParams, kNumParams>::Zero();
  Eigen::Matrix<double, kNumParams, 1> g = Eigen::Matrix<double, kNumParams, 1>::Zero();
};

// Gauss-Newton approximation of the weighted Huber cost (IRLS weights),
// accumulated in index order.
inline NormalEquations normal_equations(const EdgeCost& ec, const CalibProblem& problem, double delta) {
  NormalEquations ne;
  for (std::size_t i = 0; i < ec.residuals.size(); ++i) {
    if (!ec.valid[i]) continue;
    const double r = ec.residuals[i];
    const double robust = std::abs(r) <= delta ? 1.0 : delta / std::abs(r);
    const double w = problem.lidar_edges[i].weight * robust;
    const auto row = ec.jacobian.row(static_cast<Eigen::Index>(i));
    ne.H.noalias() += w * row.transpose() * row;
    ne.g.noalias() += w * r * row.transpose();
  }
  return ne;
}

inline CalibParams apply_update(const CalibParams& p, const Eigen::Matrix<double, kNumParams, 1>& delta) {
  const Pose extr = p.extr * se3_exp(Twist(Vec6(delta.head<6>())));
  const CameraIntrinsics intr = p.intr.with_params(p.intr.params() + delta.tail<8>());
  return {intr, extr};
}

struct StageReport {
  Stage stage;
  std::vector<double> cost_history;  // initial cost, then one entry per accepted step
  int iterations = 0;
  int accepted_steps = 0;
  std::string termination;
};

struct LmOptions {
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.5;
  double rel_cost_tol = 1e-8;
  double step_tol = 1e-10;
};

inline CalibParams lm_minimize(const CalibProblem& problem, const Stage& stage, const CalibParams& start,
                               StageReport* report = nullptr, const LmOptions& opt = {}) {
  if (stage.free_params == 0 || (stage.free_params & ~static_cast<unsigned>(kAllParams)))
    throw InvalidStage("stage must free a non-empty subset of {rot, trans, focal, principal, distortion}");
  if (stage.max_iters < 0 || !(stage.huber_delta > 0)) throw InvalidStage("bad stage limits");
  const std::vector<int> cols = free_columns(stage.free_params);
  const int m = static_cast<int>(cols.size());

  StageReport rep;
  rep.stage = stage;
  CalibParams cur = start;
  EdgeCost ec = edge_cost(cur.intr, cur.extr, problem, stage.pyramid_level, stage.huber_delta, stage.free_params);
  rep.cost_history.push_back(ec.cost);
  double lambda = opt.lambda_init;
  rep.termination = "max_iters";

  while (rep.iterations < stage.max_iters) {
    if (ec.cost == 0.0) {
      rep.termination = "zero_cost";
      break;
    }
    ++rep.iterations;
    const NormalEquations ne = normal_equations(ec, problem, stage.huber_delta);
    Eigen::MatrixXd H(m, m);
    Eigen::VectorXd g(m);
    for (int a = 0; a < m; ++a) {
      g[a] = ne.g[cols[a]];
      for (int b = 0; b < m; ++b) H(a, b) = ne.H(cols[a], cols[b]);
    }
    Eigen::MatrixXd A = H;
    for (int a = 0; a < m; ++a) A(a, a) += lambda * std::max(H(a, a), 1e-12);
    const Eigen::VectorXd step = A.ldlt().solve(-g);
    const double step_norm = step.norm();
    if (!step.allFinite() || step_norm < opt.step_tol) {
      rep.termination = "small_step";
      break;
    }
    Eigen::Matrix<double, kNumParams, 1> full = Eigen::Matrix<double, kNumParams, 1>::Zero();
    for (int a = 0; a < m; ++a) full[cols[a]] = step[a];

    bool accepted = false;
    try {
      const CalibParams cand = apply_update(cur, full);
      EdgeCost cand_cost =
          edge_cost(cand.intr, cand.extr, problem, stage.pyramid_level, stage.huber_delta, stage.free_params);
      if (cand_cost.cost < ec.cost) {
        const double rel = (ec.cost - cand_cost.cost) / ec.cost;
        cur = cand;
        ec = std::move(cand_cost);
        rep.cost_history.push_back(ec.cost);
        ++rep.accepted_steps;
        lambda *= opt.lambda_down;
        accepted = true;
        if (rel < opt.rel_cost_tol) {
          rep.termination = "converged";
          break;
        }
      }
    } catch (const InvalidIntrinsics&) {
      // candidate left the admissible intrinsics set: treat as rejected
    } catch (const NoValidProjections&) {
    }
    if (!accepted) {
      lambda *= opt.lambda_up;
      if (lambda > 1e16) {
        rep.termination = "lambda_overflow";
        break;
      }
    }
  }
  if (report) *report = std::move(rep);
  return cur;
}

// Default four-stage schedule: rotation on the coarsest level, rotation and
// translation on a middle level, then all extrinsics with focal length and
// principal point, and finally everything including distortion at full resolution.
inline std::vector<Stage> default_schedule(int levels, int max_iters = 50, double base_delta = 2.0) {
  const int coarsest = std::max(0, levels - 1);
  const int mid = coarsest / 2;
  auto delta = [&](int l) { return base_delta * std::ldexp(1.0, l); };
  return {
      {coarsest, kRot, max_iters, delta(coarsest)},
      {mid, kRot | kTrans, max_iters, delta(mid)},
      {0, kRot | kTrans | kFocal | kPrincipal, max_iters, delta(0)},
      {0, kAllParams, max_iters, delta(0)},
  };
}

struct CalibResult {
  CameraIntrinsics intr;
  Pose extr;
  std::vector<StageReport> stages;
  std::size_t inliers = 0;
  std::string termination;
  double wall_time_s = 0;
  double condition_number = 0;  // of the all-parameter normal matrix
  std::vector<CalibParams> stage_params;  // parameters after each stage
  Vec3 search_offset = Vec3::Zero();      // rotation chosen by the grid search
};

inline double condition_number(const Eigen::Matrix<double, kNumParams, kNumParams>& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, kNumParams, kNumParams>> es(H, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

// Best offset omega (right-multiplied) on the grid; ties keep the earlier
// candidate and the zero offset is tried first.
inline Vec3 rotation_search(const CalibProblem& problem, const CameraIntrinsics& intr, const Pose& extr) {
  const RotationSearch& rs = problem.search;
  if (rs.half_steps <= 0) return Vec3::Zero();
  const int level = static_cast<int>(problem.dt_pyramid.size()) - 1;
  const double delta = 2.0 * std::ldexp(1.0, level);
  auto cost_at = [&](const Vec3& w) {
    Vec6 xi;
    xi << w, Vec3::Zero();
    try {
      return edge_cost(intr, extr * se3_exp(Twist(xi)), problem, level, delta, kAllParams, false).cost;
    } catch (const NoValidProjections&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  Vec3 best = Vec3::Zero();
  double best_cost = cost_at(best);
  const int h = rs.half_steps;
  for (int i = -h; i <= h; ++i)
    for (int j = -h; j <= h; ++j)
      for (int k = -h; k <= h; ++k) {
        if (i == 0 && j == 0 && k == 0) continue;
        const Vec3 w = rs.step * Vec3(i, j, k);
        const double c = cost_at(w);
        if (c < best_cost) {
          best_cost = c;
          best = w;
        }
      }
  return best;
}

inline constexpr std::size_t kMinLidarEdges = 50;
inline constexpr double kMaxCondition = 1e12;

inline CalibResult cocalibrate(const CalibProblem& problem) {
  const auto t0 = std::chrono::steady_clock::now();
  if (problem.dt_pyramid.empty()) throw InvalidStage("distance field pyramid is empty");
  if (problem.lidar_edges.size() < kMinLidarEdges)
    throw DegenerateGeometry("only " + std::to_string(problem.lidar_edges.size()) + " LiDAR edge points (need " +
                             std::to_string(kMinLidarEdges) + ")");
  const std::vector<Stage> schedule =
      problem.schedule.empty() ? default_schedule(static_cast<int>(problem.dt_pyramid.size())) : problem.schedule;

  CalibResult res{problem.init_intr, problem.init_extr, {}, 0, "", 0, 0};
  CalibParams cur{problem.init_intr, problem.init_extr};
  res.search_offset = rotation_search(problem, cur.intr, cur.extr);
  if (!res.search_offset.isZero()) {
    Vec6 xi;
    xi << res.search_offset, Vec3::Zero();
    cur.extr = cur.extr * se3_exp(Twist(xi));
  }
  for (const Stage& stage : schedule) {
    if (stage.free_params == kAllParams) {
      const EdgeCost ec = edge_cost(cur.intr, cur.extr, problem, stage.pyramid_level, stage.huber_delta, kAllParams);
      res.condition_number = condition_number(normal_equations(ec, problem, stage.huber_delta).H);
      if (!(res.condition_number <= kMaxCondition))
        throw DegenerateGeometry("all-parameter normal matrix has condition number " +
                                 std::to_string(res.condition_number) + " (> 1e12): insufficient edge diversity");
    }
    StageReport rep;
    cur = lm_minimize(problem, stage, cur, &rep);
    for (std::size_t i = 1; i < rep.cost_history.size(); ++i)
      if (!(rep.cost_history[i] < rep.cost_history[i - 1]))
        throw NoConvergence("accepted step did not decrease the cost");
    res.termination = rep.termination;
    res.stages.push_back(std::move(rep));
    res.stage_params.push_back(cur);
  }
  res.intr = cur.intr;
  res.extr = cur.extr;
  const double delta0 = schedule.back().pyramid_level == 0 ? schedule.back().huber_delta : 2.0;
  const EdgeCost final_cost = edge_cost(cur.intr, cur.extr, problem, 0, delta0, kAllParams, false);
  for (std::size_t i = 0; i < final_cost.residuals.size(); ++i)
    if (final_cost.valid[i] && final_cost.residuals[i] <= delta0) ++res.inliers;
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Problem construction from sensor data
// ---------------------------------------------------------------------------

struct CalibOptions {
  int pyramid_levels = 2;
  CannyParams canny;
  LidarEdgeParams lidar;
  std::vector<Stage> schedule;  // empty: default
  RotationSearch search;
};

inline std::vector<DistanceField> build_dt_pyramid(const GrayImage& image, int levels, const CannyParams& canny) {
  if (levels < 1) throw InvalidStage("pyramid needs at least one level");
  std::vector<DistanceField> out;
  GrayImage level = image;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) level = downsample2(level);
    out.push_back(distance_transform(detect_image_edges(level, canny)));
  }
  return out;
}

inline CalibProblem build_problem(const ReflectivityCloud& cloud, const GrayImage& image,
                                  const CameraIntrinsics& init_intr, const Pose& init_extr,
                                  const CalibOptions& opt = {}) {
  if (image.width != init_intr.width() || image.height != init_intr.height())
    throw InvalidStage("image size does not match the intrinsics");
  CalibProblem p{lidar_edges_from_cloud(cloud, opt.lidar), build_dt_pyramid(image, opt.pyramid_levels, opt.canny),
                 init_intr, init_extr, opt.schedule, opt.search};
  return p;
}

// ---------------------------------------------------------------------------
// Evaluation against ground truth
// ---------------------------------------------------------------------------

struct CalibReport {
  double rot_err_deg = 0;
  double trans_err_mm = 0;
  double fx_rel = 0, fy_rel = 0, cx_rel = 0, cy_rel = 0;
  std::array<double, 4> k_abs{};  // distortion errors are absolute (GT may be zero)
  std::optional<double> edge_rmse_px;
};

inline CalibReport evaluate_calibration(const CameraIntrinsics& est_intr, const Pose& est_extr,
                                        const CameraIntrinsics& gt_intr, const Pose& gt_extr,
                                        const CalibProblem* problem = nullptr) {
  CalibReport r;
  r.rot_err_deg = rad2deg(rotation_distance(est_extr, gt_extr));
  r.trans_err_mm = 1000.0 * (est_extr.translation - gt_extr.translation).norm();
  auto rel = [](double e, double g) { return std::abs(e - g) / std::abs(g); };
  r.fx_rel = rel(est_intr.fx(), gt_intr.fx());
  r.fy_rel = rel(est_intr.fy(), gt_intr.fy());
  r.cx_rel = rel(est_intr.cx(), gt_intr.cx());
  r.cy_rel = rel(est_intr.cy(), gt_intr.cy());
  for (int j = 0; j < 4; ++j) r.k_abs[j] = std::abs(est_intr.k()[j] - gt_intr.k()[j]);
  if (problem) {
    const EdgeCost ec = edge_cost(est_intr, est_extr, *problem, 0, 2.0, kAllParams, false);
    double s = 0;
    for (double v : ec.residuals) s += v * v;
    r.edge_rmse_px = std::sqrt(s / static_cast<double>(ec.residuals.size()));
  }
  return r;
}

}  // namespace hycal
