#include <gtest/gtest.h>

#include <functional>

#include "hybridcal/calib.hpp"
#include "hybridcal/simulate.hpp"
#include "test_util.hpp"

using namespace hycal;
using namespace hycal::test;

namespace {

// Field with explicit values; gradients unused by edge_cost.
DistanceField make_field(int w, int h, const std::function<double(int, int)>& f) {
  DistanceField df;
  df.width = w;
  df.height = h;
  df.d.resize(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) df.d[static_cast<std::size_t>(y) * w + x] = f(x, y);
  df.grad_u.assign(df.d.size(), 0.0);
  df.grad_v.assign(df.d.size(), 0.0);
  df.max_value = *std::max_element(df.d.begin(), df.d.end());
  return df;
}

// LiDAR edge points that project exactly onto chosen pixel centers at (intr, extr),
// with the edge map made of those same pixels. Cost there is zero up to the
// unproject round-trip error.
CalibProblem exact_problem(const CameraIntrinsics& intr, const Pose& extr, std::mt19937_64& rng, int n,
                           double max_radius_px, const std::function<double(const Vec3&)>& depth) {
  EdgeMap e(intr.width(), intr.height());
  CalibProblem p{{}, {}, intr, extr, {}, {}};
  const Pose T_LC = extr.inverse();
  while (static_cast<int>(p.lidar_edges.size()) < n) {
    const int x = static_cast<int>(uniform(rng, 0, intr.width())), y = static_cast<int>(uniform(rng, 0, intr.height()));
    if (std::hypot(x - intr.cx(), y - intr.cy()) > max_radius_px) continue;
    const auto ray = try_unproject(intr, Vec2(x, y));
    if (!ray || e.at(x, y)) continue;
    e.set(x, y);
    p.lidar_edges.push_back({T_LC.apply(*ray * depth(*ray)), 1.0});
  }
  p.dt_pyramid.push_back(distance_transform(e));
  return p;
}

CalibProblem field_problem(const CameraIntrinsics& K, DistanceField df, std::vector<LidarEdge> edges = {}) {
  return {std::move(edges), {std::move(df)}, K, Pose(), {}, {}};
}

CalibProblem perturb(const CalibProblem& gt_problem, const GroundTruth& gt_sim) {
  // 3 deg about a fixed oblique axis, 5 cm, +3% fx
  const Eigen::Quaterniond dq(Eigen::AngleAxisd(deg2rad(3.0), Vec3(1, -2, 0.5).normalized()));
  const Pose& gt = gt_sim.extrinsic;
  Eigen::Matrix<double, 8, 1> k = gt_sim.intrinsics.params();
  k[0] *= 1.03;
  CalibProblem p = gt_problem;
  p.init_extr = Pose(gt.rotation * dq, gt.translation + 0.05 * Vec3(-0.3, 0.8, 0.52).normalized());
  p.init_intr = gt_sim.intrinsics.with_params(k);
  return p;
}

Pose rot_z(double rad) { return {Eigen::Quaterniond(Eigen::AngleAxisd(rad, Vec3::UnitZ())), Vec3::Zero()}; }

double max_param_diff(const CalibParams& a, const CameraIntrinsics& intr, const Pose& extr) {
  double d = (a.intr.params() - intr.params()).cwiseAbs().maxCoeff();
  d = std::max(d, (a.extr.translation - extr.translation).cwiseAbs().maxCoeff());
  return std::max(d, rotation_distance(a.extr, extr));
}

// One default simulation shared by the heavier tests.
struct SceneFixture {
  SimOutput sim;
  CalibProblem gt_problem;
  CalibProblem perturbed;
  CalibResult result;

  static SceneFixture& get() {
    static SceneFixture f;
    return f;
  }

 private:
  SceneFixture()
      : sim(simulate(SimConfig{})),
        gt_problem(build_problem(sim.cloud, sim.image, sim.gt.intrinsics, sim.gt.extrinsic)),
        perturbed(perturb(gt_problem, sim.gt)),
        result(cocalibrate(perturbed)) {}
};

}  // namespace

TEST(Huber, HandValues) {
  EXPECT_EQ(huber(3.0, 2.0), 4.0);
  EXPECT_EQ(huber(-3.0, 2.0), 4.0);
  EXPECT_EQ(huber(1.0, 2.0), 0.5);
  EXPECT_EQ(huber(2.0, 2.0), 2.0);
}

TEST(FreeParams, ColumnLayout) {
  EXPECT_EQ(free_columns(kRot), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(free_columns(kFocal | kDistortion), (std::vector<int>{6, 7, 10, 11, 12, 13}));
  EXPECT_EQ(free_columns(kAllParams).size(), 14u);
}

TEST(EdgeCost, SinglePointHandHuber) {
  const CameraIntrinsics K(100, 100, 50, 40, {0, 0, 0, 0}, 100, 80, 1.5);
  CalibProblem p = field_problem(K, make_field(100, 80, [](int, int) { return 3.0; }));
  p.lidar_edges.push_back({Vec3(0.1, -0.05, 2.0), 1.0});
  const EdgeCost ec = edge_cost(K, Pose(), p, 0, 2.0);
  EXPECT_EQ(ec.valid_count, 1u);
  EXPECT_DOUBLE_EQ(ec.cost, 4.0);
}

TEST(EdgeCost, ZeroOnEdgePixels) {
  std::mt19937_64 rng(1);
  const CalibProblem p =
      exact_problem(default_intrinsics(), default_extrinsic(), rng, 500, 1e9, [](const Vec3&) { return 2.5; });
  const EdgeCost ec = edge_cost(p.init_intr, p.init_extr, p, 0, 2.0);
  EXPECT_EQ(ec.valid_count, 500u);
  EXPECT_NEAR(ec.cost, 0.0, 1e-12);
}

TEST(EdgeCost, InvalidPointsTakeFieldMaximum) {
  const CameraIntrinsics K(100, 100, 50, 40, {0, 0, 0, 0}, 100, 80, 1.5);
  CalibProblem p = field_problem(K, make_field(100, 80, [](int x, int) { return 0.01 * x; }));
  p.lidar_edges = {{Vec3(0, 0, 1), 1.0}, {Vec3(0, 0, -1), 1.0}, {Vec3(50, 0, 1), 1.0}};
  const EdgeCost ec = edge_cost(K, Pose(), p, 0, 100.0);
  EXPECT_EQ(ec.valid_count, 1u);
  EXPECT_EQ(ec.residuals[1], p.dt_pyramid[0].max_value);
  EXPECT_EQ(ec.residuals[2], p.dt_pyramid[0].max_value);
  EXPECT_TRUE(ec.jacobian.row(1).isZero(0.0));
  EXPECT_TRUE(ec.jacobian.row(2).isZero(0.0));
}

TEST(EdgeCost, AllInvalidThrows) {
  const CameraIntrinsics K(100, 100, 50, 40, {0, 0, 0, 0}, 100, 80, 1.5);
  CalibProblem p = field_problem(K, make_field(100, 80, [](int, int) { return 1.0; }));
  p.lidar_edges = {{Vec3(0, 0, -1), 1.0}, {Vec3(0.1, 0, -3), 1.0}};
  EXPECT_THROW(edge_cost(K, Pose(), p, 0, 2.0), NoValidProjections);
  EXPECT_THROW(edge_cost(K, Pose(), p, 1, 2.0), InvalidStage);
  EXPECT_THROW(lm_minimize(p, Stage{0, kRot, 10, 2.0}, {K, Pose()}), NoValidProjections);
}

// Central differences on the residual vector, rows whose three samples stay in
// one bilinear cell. Per-column relative error of the stacked rows.
TEST(EdgeCost, JacobianMatchesFiniteDifferences) {
  const auto& fx = SceneFixture::get();
  const CalibProblem& p = fx.gt_problem;
  std::mt19937_64 rng(2);
  const double steps[kNumParams] = {1e-7, 1e-7, 1e-7, 1e-7, 1e-7, 1e-7, 1e-5, 1e-5,
                                    1e-5, 1e-5, 1e-7, 1e-7, 1e-7, 1e-7};
  for (int config = 0; config < 20; ++config) {
    const int level = config % 2;
    Vec6 xi;
    xi << random_unit(rng) * deg2rad(uniform(rng, 0, 1)), random_vec(rng, -0.01, 0.01);
    Eigen::Matrix<double, 8, 1> k = p.init_intr.params();
    for (int j = 0; j < 4; ++j) k[j] *= 1 + uniform(rng, -0.01, 0.01);
    const CalibParams at{p.init_intr.with_params(k), p.init_extr * se3_exp(Twist(xi))};
    const EdgeCost ec = edge_cost(at.intr, at.extr, p, level, 2.0);
    for (int c = 0; c < kNumParams; ++c) {
      Eigen::Matrix<double, kNumParams, 1> d = Eigen::Matrix<double, kNumParams, 1>::Zero();
      d[c] = steps[c];
      const CalibParams hi = apply_update(at, d), lo = apply_update(at, -d);
      const EdgeCost ep = edge_cost(hi.intr, hi.extr, p, level, 2.0, kAllParams, false);
      const EdgeCost em = edge_cost(lo.intr, lo.extr, p, level, 2.0, kAllParams, false);
      double num = 0, den = 0;
      int rows = 0;
      for (std::size_t i = 0; i < p.lidar_edges.size(); ++i) {
        if (!ec.valid[i] || !ep.valid[i] || !em.valid[i]) continue;
        auto cell = [&](const CalibParams& q) {
          const Vec2 px = to_level(project(q.intr, q.extr.apply(p.lidar_edges[i].point)).pixel, level);
          return std::make_pair(std::floor(px.x()), std::floor(px.y()));
        };
        const auto c0 = cell(at);
        if (cell(hi) != c0 || cell(lo) != c0) continue;
        const double fd = (ep.residuals[i] - em.residuals[i]) / (2 * steps[c]);
        const double an = ec.jacobian(static_cast<Eigen::Index>(i), c);
        num += (fd - an) * (fd - an);
        den += an * an;
        ++rows;
      }
      ASSERT_GT(rows, 100);
      EXPECT_LT(std::sqrt(num / den), 1e-3) << "config " << config << " column " << c;
    }
  }
}

TEST(EdgeCost, StageMaskZeroesFixedColumns) {
  const auto& fx = SceneFixture::get();
  const CalibProblem& p = fx.gt_problem;
  const EdgeCost full = edge_cost(p.init_intr, p.init_extr, p, 0, 2.0, kAllParams);
  const EdgeCost masked = edge_cost(p.init_intr, p.init_extr, p, 0, 2.0, kRot | kFocal);
  EXPECT_EQ(full.cost, masked.cost);
  for (int c = 0; c < kNumParams; ++c) {
    const bool free = c < 3 || c == 6 || c == 7;
    if (free)
      EXPECT_TRUE(masked.jacobian.col(c) == full.jacobian.col(c));
    else
      EXPECT_TRUE(masked.jacobian.col(c).isZero(0.0));
  }
}

TEST(Lm, ZeroCostFixedPoint) {
  const CameraIntrinsics K(100, 100, 50, 40, {0, 0, 0, 0}, 100, 80, 1.5);
  CalibProblem p = field_problem(K, make_field(100, 80, [](int, int) { return 0.0; }));
  for (int i = 0; i < 60; ++i) p.lidar_edges.push_back({Vec3(0.01 * i - 0.3, 0.005 * i - 0.1, 2.0), 1.0});
  StageReport rep;
  const CalibParams start{K, Pose(Eigen::Quaterniond(0.99, 0.01, 0.02, 0.03), Vec3(0.1, 0.2, 0.3))};
  const CalibParams out = lm_minimize(p, Stage{0, kAllParams, 50, 2.0}, start, &rep);
  EXPECT_EQ(rep.accepted_steps, 0);
  EXPECT_EQ(out.intr, start.intr);
  EXPECT_EQ(out.extr.rotation.coeffs(), start.extr.rotation.coeffs());
  EXPECT_EQ(out.extr.translation, start.extr.translation);
}

// Field d = u - u0 with one on-axis point: residual = cx - u0, cost quadratic in cx.
TEST(Lm, QuadraticSurrogateVertex) {
  const double u0 = 80.3;
  const CameraIntrinsics K(100, 100, 120.0, 50, {0, 0, 0, 0}, 200, 100, 1.5);
  CalibProblem p = field_problem(K, make_field(200, 100, [&](int x, int) { return x - u0; }));
  p.lidar_edges.push_back({Vec3(0, 0, 3), 1.0});
  StageReport rep;
  const CalibParams out = lm_minimize(p, Stage{0, kPrincipal, 50, 1e6}, {K, Pose()}, &rep);
  EXPECT_NEAR(out.intr.cx(), u0, 1e-8);
  EXPECT_EQ(out.intr.cy(), 50.0);
  EXPECT_LE(rep.iterations, 15);
  for (std::size_t i = 1; i < rep.cost_history.size(); ++i) EXPECT_LT(rep.cost_history[i], rep.cost_history[i - 1]);
}

TEST(Lm, RejectsBadStage) {
  const CameraIntrinsics K(100, 100, 50, 40, {0, 0, 0, 0}, 100, 80, 1.5);
  CalibProblem p = field_problem(K, make_field(100, 80, [](int, int) { return 1.0; }));
  p.lidar_edges.push_back({Vec3(0, 0, 1), 1.0});
  EXPECT_THROW(lm_minimize(p, Stage{0, kRot, -1, 2.0}, {K, Pose()}), InvalidStage);
  EXPECT_THROW(lm_minimize(p, Stage{0, kRot, 10, 0.0}, {K, Pose()}), InvalidStage);
}

TEST(Schedule, DefaultStages) {
  const auto s = default_schedule(3);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].pyramid_level, 2);
  EXPECT_EQ(s[0].free_params, static_cast<unsigned>(kRot));
  EXPECT_EQ(s[0].huber_delta, 8.0);
  EXPECT_EQ(s[1].pyramid_level, 1);
  EXPECT_EQ(s[1].free_params, static_cast<unsigned>(kRot | kTrans));
  EXPECT_EQ(s[2].pyramid_level, 0);
  EXPECT_EQ(s[2].free_params, static_cast<unsigned>(kRot | kTrans | kFocal | kPrincipal));
  EXPECT_EQ(s[3].pyramid_level, 0);
  EXPECT_EQ(s[3].free_params, static_cast<unsigned>(kAllParams));
  EXPECT_EQ(s[3].huber_delta, 2.0);
}

TEST(Cocalibrate, GroundTruthIsFixedPoint) {
  std::mt19937_64 rng(3);
  const CalibProblem p = exact_problem(default_intrinsics(), default_extrinsic(), rng, 3000, 1e9,
                                       [&](const Vec3&) { return uniform(rng, 1.0, 5.0); });
  const CalibResult r = cocalibrate(p);
  EXPECT_TRUE(r.search_offset.isZero(0.0));
  EXPECT_LT(max_param_diff({r.intr, r.extr}, p.init_intr, p.init_extr), 1e-10);
}

TEST(Cocalibrate, TooFewEdges) {
  std::mt19937_64 rng(4);
  const CalibProblem p =
      exact_problem(default_intrinsics(), default_extrinsic(), rng, 49, 1e9, [](const Vec3&) { return 2.0; });
  EXPECT_THROW(cocalibrate(p), DegenerateGeometry);
}

// Edges on one fronto-parallel wall patch around the optical axis: the
// distortion columns (theta^3..theta^9) become nearly collinear.
TEST(Cocalibrate, SinglePlanarWallIsDegenerate) {
  std::mt19937_64 rng(5);
  const CalibProblem p = exact_problem(default_intrinsics(), default_extrinsic(), rng, 2000, 120,
                                       [](const Vec3& ray) { return 2.5 / ray.z(); });
  try {
    cocalibrate(p);
    ADD_FAILURE() << "expected DegenerateGeometry";
  } catch (const DegenerateGeometry& e) {
    EXPECT_NE(std::string(e.what()).find("condition number"), std::string::npos) << e.what();
  }
}

TEST(Cocalibrate, RecoversPerturbedInit) {
  const auto& fx = SceneFixture::get();
  const CalibReport init_rep = evaluate_calibration(fx.perturbed.init_intr, fx.perturbed.init_extr,
                                                    fx.sim.gt.intrinsics, fx.sim.gt.extrinsic);
  EXPECT_NEAR(init_rep.rot_err_deg, 3.0, 1e-9);
  EXPECT_NEAR(init_rep.trans_err_mm, 50.0, 1e-9);
  const CalibReport rep =
      evaluate_calibration(fx.result.intr, fx.result.extr, fx.sim.gt.intrinsics, fx.sim.gt.extrinsic);
  EXPECT_LT(rep.rot_err_deg, 0.2);
  EXPECT_LT(rep.trans_err_mm, 10.0);
  EXPECT_LT(rep.fx_rel, 0.005);
  EXPECT_LT(rep.fy_rel, 0.005);
  EXPECT_LT(fx.result.condition_number, kMaxCondition);
}

TEST(Cocalibrate, CostMonotoneWithinEveryStage) {
  const auto& fx = SceneFixture::get();
  ASSERT_EQ(fx.result.stages.size(), 4u);
  for (const auto& st : fx.result.stages)
    for (std::size_t i = 1; i < st.cost_history.size(); ++i) EXPECT_LT(st.cost_history[i], st.cost_history[i - 1]);
}

TEST(Cocalibrate, Deterministic) {
  const auto& fx = SceneFixture::get();
  const CalibResult again = cocalibrate(fx.perturbed);
  EXPECT_EQ(again.intr, fx.result.intr);
  EXPECT_EQ(again.extr.rotation.coeffs(), fx.result.extr.rotation.coeffs());
  EXPECT_EQ(again.extr.translation, fx.result.extr.translation);
  EXPECT_EQ(again.inliers, fx.result.inliers);
  ASSERT_EQ(again.stages.size(), fx.result.stages.size());
  for (std::size_t s = 0; s < again.stages.size(); ++s)
    EXPECT_EQ(again.stages[s].cost_history, fx.result.stages[s].cost_history);
}

TEST(Cocalibrate, WeightScalingInvariance) {
  const auto& fx = SceneFixture::get();
  const double c = 3.7;
  CalibProblem scaled = fx.perturbed;
  for (auto& e : scaled.lidar_edges) e.weight *= c;
  const EdgeCost a = edge_cost(fx.perturbed.init_intr, fx.perturbed.init_extr, fx.perturbed, 0, 2.0);
  const EdgeCost b = edge_cost(fx.perturbed.init_intr, fx.perturbed.init_extr, scaled, 0, 2.0);
  EXPECT_NEAR(b.cost / a.cost, c, 1e-12);
  const CalibResult r = cocalibrate(scaled);
  EXPECT_LT(max_param_diff({r.intr, r.extr}, fx.result.intr, fx.result.extr), 1e-9);
}

TEST(RotationSearch, GroundTruthKeepsZeroOffset) {
  const auto& fx = SceneFixture::get();
  EXPECT_TRUE(rotation_search(fx.gt_problem, fx.sim.gt.intrinsics, fx.sim.gt.extrinsic).isZero(0.0));
  CalibProblem off = fx.gt_problem;
  off.search.half_steps = 0;
  EXPECT_TRUE(rotation_search(off, fx.sim.gt.intrinsics, fx.sim.gt.extrinsic * rot_z(0.05)).isZero(0.0));
}

TEST(Evaluate, IdentityIsZero) {
  const CalibReport r =
      evaluate_calibration(default_intrinsics(), default_extrinsic(), default_intrinsics(), default_extrinsic());
  EXPECT_EQ(r.rot_err_deg, 0.0);
  EXPECT_EQ(r.trans_err_mm, 0.0);
  EXPECT_EQ(r.fx_rel, 0.0);
  EXPECT_EQ(r.cy_rel, 0.0);
  for (double k : r.k_abs) EXPECT_EQ(k, 0.0);
  EXPECT_FALSE(r.edge_rmse_px.has_value());
}

TEST(Evaluate, OneDegreeAboutZ) {
  const Pose gt = default_extrinsic();
  const Pose est(gt.rotation * rot_z(deg2rad(1.0)).rotation, gt.translation);
  const CalibReport r = evaluate_calibration(default_intrinsics(), est, default_intrinsics(), gt);
  EXPECT_NEAR(r.rot_err_deg, 1.0, 1e-9);
  EXPECT_EQ(r.trans_err_mm, 0.0);
}

TEST(Evaluate, TraceFormulaOracle) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Pose gt = random_pose(rng), est = random_pose(rng);
    const CalibReport r = evaluate_calibration(default_intrinsics(), est, default_intrinsics(), gt);
    const double angle = rad2deg(trace_angle(est.R() * gt.R().transpose()));
    EXPECT_NEAR(r.rot_err_deg, angle, 1e-5 + 1e-6 * angle);
    EXPECT_NEAR(r.trans_err_mm, 1000.0 * (est.translation - gt.translation).norm(), 1e-9);
  }
}

TEST(Evaluate, EdgeRmseAtExactSolution) {
  std::mt19937_64 rng(7);
  const CalibProblem p =
      exact_problem(default_intrinsics(), default_extrinsic(), rng, 200, 1e9, [](const Vec3&) { return 3.0; });
  const CalibReport r = evaluate_calibration(p.init_intr, p.init_extr, p.init_intr, p.init_extr, &p);
  ASSERT_TRUE(r.edge_rmse_px.has_value());
  EXPECT_LT(*r.edge_rmse_px, 1e-9);
}
