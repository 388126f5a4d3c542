#pragma once

// Single-binary command line: simulate | calibrate | calibrate-mi | evaluate |
// edges-debug | colorize | assemble | stitch | viewpoints | repro.
// Exit status 0 on success, 1 on validation/parse errors, 2 on algorithmic failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hybridcal/calib.hpp"
#include "hybridcal/cloud.hpp"
#include "hybridcal/edges.hpp"
#include "hybridcal/error.hpp"
#include "hybridcal/formats/io.hpp"
#include "hybridcal/formats/json_io.hpp"
#include "hybridcal/formats/ply.hpp"
#include "hybridcal/formats/pnm.hpp"
#include "hybridcal/formats/poses.hpp"
#include "hybridcal/mapping.hpp"
#include "hybridcal/mi.hpp"
#include "hybridcal/parallel.hpp"
#include "hybridcal/simulate.hpp"

namespace hycal::cli {

namespace fs = std::filesystem;

struct Common {
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  bool verbose = false;
};

class Clock {
 public:
  Clock() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_;
};

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

inline void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

inline ColorImage read_any_color(const fs::path& path) {
  const PnmImage p = parse_pnm(read_file(path));
  if (p.channels == 3) {
    ColorImage c(p.width, p.height);
    c.data = p.data;
    return c;
  }
  return gray_to_color(to_gray(p));
}

inline GrayImage read_any_gray(const fs::path& path) { return to_gray(parse_pnm(read_file(path))); }

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Projected LiDAR edge points drawn over a dimmed copy of the image.
inline GrayImage residual_overlay(const GrayImage& image, const CalibProblem& problem, const CameraIntrinsics& intr,
                                  const Pose& extr) {
  GrayImage out = image;
  for (double& v : out.data) v *= 0.5;
  for (const LidarEdge& e : problem.lidar_edges) {
    const Projection p = project(intr, extr.apply(e.point));
    if (!p.valid) continue;
    const int x = static_cast<int>(std::lround(p.pixel.x())), y = static_cast<int>(std::lround(p.pixel.y()));
    out.at(x, y) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out;
  bool non_lambertian = false;
};

inline int cmd_simulate(const SimulateArgs& a, const Common& c) {
  SimConfig cfg = a.config.empty() ? SimConfig{} : scene_config_from_json(jsonio::read_json(a.config));
  if (c.seed) cfg.seed = *c.seed;
  if (a.non_lambertian) cfg.non_lambertian = true;
  Clock clk;
  const SimOutput sim = simulate(cfg);
  const fs::path dir(a.out);
  ensure_dir(dir);
  write_ply(dir / "cloud.ply", sim.cloud);
  write_pgm(dir / "image.pgm", sim.image);
  write_ppm(dir / "image.ppm", sim.color);
  jsonio::write_json(dir / "gt.json", gt_to_json(sim.gt, cfg.seed));
  jsonio::write_json(dir / "scene.json", scene_config_to_json(cfg));
  std::cout << "simulated " << sim.cloud.size() << " points and a " << sim.image.width << "x" << sim.image.height
            << " image into " << dir.string() << " (" << fmt("%.2f", clk.seconds()) << " s)\n";
  return 0;
}

struct CalibrateArgs {
  std::string cloud, image, init, out, overlay_dir;
  bool timing = false;
};

inline int cmd_calibrate(const CalibrateArgs& a, const Common& c) {
  const CalibInit init = calib_init_from_json(jsonio::read_json(a.init));
  const ReflectivityCloud cloud = read_ply(a.cloud);
  const GrayImage image = read_any_gray(a.image);
  Clock clk;
  const CalibProblem problem = build_problem(cloud, image, init.intr, init.extr, init.options);
  if (c.verbose) std::cerr << "lidar edges: " << problem.lidar_edges.size() << "\n";
  const CalibResult res = cocalibrate(problem);
  const double secs = clk.seconds();
  ensure_parent(a.out);
  CalibResult stamped = res;
  stamped.wall_time_s = secs;
  jsonio::write_json(a.out, calib_result_to_json(stamped, a.timing));
  if (!a.overlay_dir.empty()) {
    ensure_dir(a.overlay_dir);
    write_pgm(fs::path(a.overlay_dir) / "overlay_init.pgm", residual_overlay(image, problem, init.intr, init.extr));
    for (std::size_t i = 0; i < res.stage_params.size(); ++i)
      write_pgm(fs::path(a.overlay_dir) / ("overlay_stage" + std::to_string(i + 1) + ".pgm"),
                residual_overlay(image, problem, res.stage_params[i].intr, res.stage_params[i].extr));
  }
  for (const auto& s : res.stages)
    std::cout << "stage L" << s.stage.pyramid_level << ": " << s.iterations << " iterations, cost "
              << fmt("%.6g", s.cost_history.front()) << " -> " << fmt("%.6g", s.cost_history.back()) << " ("
              << s.termination << ")\n";
  std::cout << "calibrated in " << fmt("%.2f", secs) << " s; inliers " << res.inliers << "\n";
  return 0;
}

struct CalibrateMiArgs {
  std::string cloud, image, init, out, sweep_csv;
  int bins = 64;
  int max_evals = 500;
  double smoothing = 0;
  int sweep_axis = 0;
  double sweep_range = 2.0;  // degrees (axes 0-2) or centimeters (3-5)
  int sweep_steps = 41;
};

inline int cmd_calibrate_mi(const CalibrateMiArgs& a, const Common&) {
  const CalibInit init = calib_init_from_json(jsonio::read_json(a.init));
  const ReflectivityCloud cloud = read_ply(a.cloud);
  const GrayImage image = read_any_gray(a.image);
  if (a.bins < 2) throw InvalidStage("--bins must be >= 2");
  if (a.sweep_axis < 0 || a.sweep_axis > 5) throw InvalidStage("--sweep-axis must be in 0..5");
  MiOptions opt;
  opt.bins = a.bins;
  opt.max_evals = a.max_evals;
  opt.smoothing_sigma = a.smoothing;
  Clock clk;
  const MiResult r = mi_calibrate(cloud, image, init.intr, init.extr, opt);
  ensure_parent(a.out);
  jsonio::write_json(a.out, mi_result_to_json(r, opt));
  if (!a.sweep_csv.empty()) {
    const double half = a.sweep_axis < 3 ? deg2rad(a.sweep_range) : a.sweep_range / 100.0;
    const auto sweep = mi_sweep(cloud, image, init.intr, r.extr, a.sweep_axis, half, a.sweep_steps, opt);
    std::string csv = "axis,offset,mi\n";
    for (const auto& [off, mi] : sweep) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", a.sweep_axis, off, mi);
      csv += buf;
    }
    ensure_parent(a.sweep_csv);
    write_file_atomic(a.sweep_csv, csv);
  }
  std::cout << "MI " << fmt("%.6f", r.mi) << " bits after " << r.evaluations << " evaluations ("
            << fmt("%.2f", clk.seconds()) << " s)\n";
  return 0;
}

struct EvaluateArgs {
  std::string calib, gt, cloud, image, out;
};

inline int cmd_evaluate(const EvaluateArgs& a, const Common&) {
  const CalibParams est = calib_params_from_json(jsonio::read_json(a.calib));
  const GroundTruth gt = gt_from_json(jsonio::read_json(a.gt));
  std::optional<CalibProblem> problem;
  if (!a.cloud.empty() && !a.image.empty())
    problem = build_problem(read_ply(a.cloud), read_any_gray(a.image), est.intr, est.extr);
  const CalibReport rep =
      evaluate_calibration(est.intr, est.extr, gt.intrinsics, gt.extrinsic, problem ? &*problem : nullptr);
  const Json j = calib_report_to_json(rep);
  if (!a.out.empty()) {
    ensure_parent(a.out);
    jsonio::write_json(a.out, j);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct EdgesDebugArgs {
  std::string image, cloud, out;
  double sigma = 1.4, low = 0.04, high = 0.10;
  int n_az = 1000, n_el = 500;
  double g_min = 0.1, depth_rel_max = 0.1;
};

inline int cmd_edges_debug(const EdgesDebugArgs& a, const Common&) {
  if (a.image.empty() && a.cloud.empty()) throw InvalidStage("edges-debug needs --image and/or --cloud");
  const fs::path dir(a.out);
  ensure_dir(dir);
  if (!a.image.empty()) {
    const GrayImage image = read_any_gray(a.image);
    const EdgeMap edges = detect_image_edges(image, CannyParams{a.sigma, a.low, a.high, true});
    write_pgm(dir / "image_edges.pgm", edge_mask_image(edges));
    const DistanceField df = distance_transform(edges);
    write_pgm(dir / "distance.pgm", distance_field_image(df, df.max_value), 65535);
    jsonio::write_json(dir / "distance.json", Json{{"scale_px", df.max_value}, {"maxval", 65535}});
    std::size_t n = 0;
    for (auto m : edges.mask) n += m;
    std::cout << "image edges: " << n << " pixels, max distance " << fmt("%.2f", df.max_value) << " px\n";
  }
  if (!a.cloud.empty()) {
    const ReflectivityCloud cloud = read_ply(a.cloud);
    const LidarEdgeParams lp{a.n_az, a.n_el, a.g_min, a.depth_rel_max, 1};
    const Eigen::Quaterniond q = equator_alignment(cloud);
    const SphericalImage sph = build_spherical_image(transform_cloud(cloud, Pose(q, Vec3::Zero())), a.n_az, a.n_el);
    write_pgm(dir / "spherical.pgm", spherical_reflectivity_image(sph));
    const auto edges = lidar_edges_from_cloud(cloud, lp);
    ReflectivityCloud ec;
    for (const auto& e : edges) ec.push_back(e.point, std::clamp(e.weight, 0.0, 1.0), 0.0);
    write_ply(dir / "lidar_edges.ply", ec);
    std::cout << "lidar edges: " << edges.size() << " points\n";
  }
  return 0;
}

struct ColorizeArgs {
  std::string cloud, calib, poses, out;
  std::vector<std::string> images;
  int splat = 1;
  double tolerance = 0.01;
};

inline int cmd_colorize(const ColorizeArgs& a, const Common&) {
  const CalibParams cal = calib_params_from_json(jsonio::read_json(a.calib));
  const ReflectivityCloud cloud = read_ply(a.cloud);
  std::vector<Pose> poses(a.images.size(), Pose::identity());
  if (!a.poses.empty()) {
    const auto recs = read_poses(a.poses);
    if (recs.size() != a.images.size())
      throw CountMismatch(std::to_string(a.images.size()) + " images but " + std::to_string(recs.size()) + " poses");
    for (std::size_t i = 0; i < recs.size(); ++i) poses[i] = recs[i].pose;
  }
  std::vector<ColorView> views;
  for (std::size_t i = 0; i < a.images.size(); ++i) views.push_back({read_any_color(a.images[i]), poses[i]});
  ColorizeParams cp;
  cp.splat_radius = a.splat;
  cp.tolerance = a.tolerance;
  const ReflectivityCloud out = colorize(cloud, views, cal.intr, cal.extr, cp);
  ensure_parent(a.out);
  write_ply(a.out, out);
  std::size_t n = 0;
  for (auto f : out.colored) n += f;
  std::cout << "colored " << n << " of " << out.size() << " points\n";
  return 0;
}

struct AssembleArgs {
  std::vector<std::string> scans;
  std::string poses, out;
  double voxel = 0.05;
};

inline int cmd_assemble(const AssembleArgs& a, const Common&) {
  const auto poses = read_poses(a.poses);
  std::vector<ReflectivityCloud> scans;
  for (const auto& s : a.scans) scans.push_back(read_ply(s));
  const ReflectivityCloud map = assemble_coarse_map(scans, poses, a.voxel);
  ensure_parent(a.out);
  write_ply(a.out, map);
  std::cout << "coarse map: " << map.size() << " points from " << scans.size() << " scans\n";
  return 0;
}

struct StitchArgs {
  std::string coarse, init, out, report;
  std::vector<std::string> fine;
  double fusion_voxel = 0.05;
  IcpParams icp;
};

inline int cmd_stitch(const StitchArgs& a, const Common&) {
  const ReflectivityCloud coarse = read_ply(a.coarse);
  std::vector<ReflectivityCloud> fine;
  for (const auto& f : a.fine) fine.push_back(read_ply(f));
  std::vector<Pose> init(fine.size(), Pose::identity());
  if (!a.init.empty()) {
    const auto recs = read_poses(a.init);
    if (recs.size() != fine.size())
      throw CountMismatch(std::to_string(fine.size()) + " fine scans but " + std::to_string(recs.size()) + " poses");
    for (std::size_t i = 0; i < recs.size(); ++i) init[i] = recs[i].pose;
  }
  const StitchResult res = stitch_fine(coarse, fine, init, a.icp, a.fusion_voxel);
  ensure_parent(a.out);
  write_ply(a.out, res.merged);
  Json scans = Json::array();
  std::size_t failed = 0;
  for (std::size_t i = 0; i < res.reports.size(); ++i) {
    scans.push_back(stitch_report_to_json(res.reports[i], i));
    failed += !res.reports[i].error.empty();
  }
  if (!a.report.empty()) {
    ensure_parent(a.report);
    jsonio::write_json(a.report, Json{{"scans", scans}, {"merged_points", res.merged.size()}});
  }
  for (std::size_t i = 0; i < res.reports.size(); ++i) {
    const auto& r = res.reports[i];
    if (!r.error.empty())
      std::cerr << "scan " << i << ": " << r.error << "\n";
    else
      std::cout << "scan " << i << ": " << r.iterations << " iterations, rms " << fmt("%.4g", r.rms_history.front())
                << " -> " << fmt("%.4g", r.rms_history.back()) << (r.converged ? " (converged)" : "") << "\n";
  }
  std::cout << "merged map: " << res.merged.size() << " points\n";
  return failed == res.reports.size() && !res.reports.empty() ? 2 : 0;
}

struct ViewpointsArgs {
  std::string map, out;
  std::vector<double> roi_min, roi_max;
  int k = 3;
  double clearance = 0.5;
  double voxel = 0.05;
};

inline int cmd_viewpoints(const ViewpointsArgs& a, const Common&) {
  const ReflectivityCloud map = read_ply(a.map);
  const Aabb roi{Vec3(a.roi_min[0], a.roi_min[1], a.roi_min[2]), Vec3(a.roi_max[0], a.roi_max[1], a.roi_max[2])};
  ViewpointParams vp;
  vp.voxel = a.voxel;
  const auto vps = propose_viewpoints(map, roi, a.k, a.clearance, vp);
  ensure_parent(a.out);
  jsonio::write_json(a.out, viewpoints_to_json(vps));
  for (const auto& v : vps)
    std::cout << "viewpoint at (" << fmt("%.3f", v.pose.translation.x()) << ", " << fmt("%.3f", v.pose.translation.y())
              << ", " << fmt("%.3f", v.pose.translation.z()) << ") covers " << v.gain << " new voxels\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Reproduction run
// ---------------------------------------------------------------------------

struct ReproArgs {
  std::string out = "repro_out";
  std::string config;
  bool non_lambertian = false;
};

struct Perturbation {
  Pose delta;  // init = gt * delta
  double fx_scale = 1.03;
};

// 3 deg about a random axis, 5 cm along a random direction, +3% fx.
inline Perturbation seeded_perturbation(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 axis, dir;
  do axis = Vec3(g(rng), g(rng), g(rng));
  while (axis.norm() < 1e-6);
  do dir = Vec3(g(rng), g(rng), g(rng));
  while (dir.norm() < 1e-6);
  return {Pose(Eigen::Quaterniond(Eigen::AngleAxisd(deg2rad(3.0), axis.normalized())), 0.05 * dir.normalized()), 1.03};
}

inline Json repro_report(const ReproArgs& a, const Common& c, std::ostream& out) {
  SimConfig cfg = a.config.empty() ? SimConfig{} : scene_config_from_json(jsonio::read_json(a.config));
  if (c.seed) cfg.seed = *c.seed;
  if (a.non_lambertian) cfg.non_lambertian = true;

  Clock clk;
  const SimOutput sim = simulate(cfg);
  const double t_sim = clk.seconds();

  const Perturbation pert = seeded_perturbation(cfg.seed);
  const Pose init_extr = cfg.extrinsic * pert.delta;
  Vec8 ip = cfg.intrinsics.params();
  ip[0] *= pert.fx_scale;
  const CameraIntrinsics init_intr = cfg.intrinsics.with_params(ip);

  Clock ce;
  const CalibProblem problem = build_problem(sim.cloud, sim.image, init_intr, init_extr);
  const CalibResult edge = cocalibrate(problem);
  const double t_edge = ce.seconds();

  Clock cm;
  const MiResult mi = mi_calibrate(sim.cloud, sim.image, cfg.intrinsics, init_extr);
  const double t_mi = cm.seconds();

  const CalibReport r0 = evaluate_calibration(init_intr, init_extr, cfg.intrinsics, cfg.extrinsic);
  const CalibReport re = evaluate_calibration(edge.intr, edge.extr, cfg.intrinsics, cfg.extrinsic, &problem);
  const CalibReport rm = evaluate_calibration(cfg.intrinsics, mi.extr, cfg.intrinsics, cfg.extrinsic);

  char line[256];
  out << "seed " << cfg.seed << (cfg.non_lambertian ? ", non-Lambertian" : ", Lambertian") << "; "
      << sim.cloud.size() << " LiDAR points, " << problem.lidar_edges.size() << " LiDAR edges\n";
  std::snprintf(line, sizeof line, "%-12s %12s %14s %10s %10s %10s\n", "method", "rot err deg", "trans err mm",
                "fx rel %", "fy rel %", "time s");
  out << line;
  auto row = [&](const char* name, const CalibReport& r, double t) {
    std::snprintf(line, sizeof line, "%-12s %12.4f %14.3f %10.4f %10.4f %10.2f\n", name, r.rot_err_deg,
                  r.trans_err_mm, 100 * r.fx_rel, 100 * r.fy_rel, t);
    out << line;
  };
  row("initial", r0, 0.0);
  row("edge", re, t_edge);
  row("mi", rm, t_mi);
  std::snprintf(line, sizeof line, "simulation %.2f s\n", t_sim);
  out << line;

  Json stages = Json::array();
  for (const auto& s : edge.stages) {
    Json js = stage_to_json(s.stage);
    js["iterations"] = s.iterations;
    js["final_cost"] = s.cost_history.back();
    js["termination"] = s.termination;
    stages.push_back(js);
  }
  return {{"seed", cfg.seed},
          {"non_lambertian", cfg.non_lambertian},
          {"points", sim.cloud.size()},
          {"lidar_edges", problem.lidar_edges.size()},
          {"perturbation",
           {{"delta", pose_to_json(pert.delta)}, {"fx_scale", pert.fx_scale}, {"error", calib_report_to_json(r0)}}},
          {"edge",
           {{"error", calib_report_to_json(re)},
            {"intrinsics", intrinsics_to_json(edge.intr)},
            {"extrinsic", pose_to_json(edge.extr)},
            {"stages", stages},
            {"condition_number", jsonio::num(edge.condition_number)}}},
          {"mi",
           {{"error", calib_report_to_json(rm)},
            {"extrinsic", pose_to_json(mi.extr)},
            {"mi", mi.mi},
            {"evaluations", mi.evaluations}}},
          {"mi_rot_error_exceeds_edge", rm.rot_err_deg > re.rot_err_deg}};
}

inline int cmd_repro(const ReproArgs& a, const Common& c) {
  const Json report = repro_report(a, c, std::cout);
  ensure_dir(a.out);
  jsonio::write_json(fs::path(a.out) / "repro_report.json", report);
  std::cout << "wrote " << (fs::path(a.out) / "repro_report.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Camera-LiDAR co-calibration and coarse-to-fine mapping"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  app.add_option("--threads", common.threads, "worker threads (0 = all cores)");
  app.add_flag("--verbose,-v", common.verbose, "progress on stderr");

  const auto existing = CLI::ExistingFile;

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "render a synthetic scene: cloud.ply, image.pgm/ppm, gt.json");
  s_sim->add_option("--config", sim.config, "scene.json (defaults when omitted)")->check(existing);
  s_sim->add_option("--out", sim.out, "output directory")->required();
  s_sim->add_flag("--non-lambertian", sim.non_lambertian, "per-face camera brightness gains");

  CalibrateArgs cal;
  auto* s_cal = app.add_subcommand("calibrate", "edge-based intrinsic + extrinsic co-calibration");
  s_cal->add_option("--cloud", cal.cloud, "LiDAR cloud (PLY, LiDAR frame)")->required()->check(existing);
  s_cal->add_option("--image", cal.image, "camera image (PGM/PPM)")->required()->check(existing);
  s_cal->add_option("--init", cal.init, "calib_init.json")->required()->check(existing);
  s_cal->add_option("--out", cal.out, "calib_result.json")->required();
  s_cal->add_option("--overlay-dir", cal.overlay_dir, "write per-stage residual overlays here");
  s_cal->add_flag("--record-timing", cal.timing, "include wall time in the result");

  CalibrateMiArgs mi;
  auto* s_mi = app.add_subcommand("calibrate-mi", "mutual-information extrinsic baseline");
  s_mi->add_option("--cloud", mi.cloud)->required()->check(existing);
  s_mi->add_option("--image", mi.image)->required()->check(existing);
  s_mi->add_option("--init", mi.init, "calib_init.json (intrinsics held fixed)")->required()->check(existing);
  s_mi->add_option("--out", mi.out, "mi_result.json")->required();
  s_mi->add_option("--bins", mi.bins);
  s_mi->add_option("--max-evals", mi.max_evals);
  s_mi->add_option("--smoothing", mi.smoothing, "histogram smoothing sigma in bins");
  s_mi->add_option("--sweep-csv", mi.sweep_csv, "write a one-axis MI sweep around the result");
  s_mi->add_option("--sweep-axis", mi.sweep_axis, "0-2 rotation, 3-5 translation");
  s_mi->add_option("--sweep-range", mi.sweep_range, "half range: degrees or centimeters");
  s_mi->add_option("--sweep-steps", mi.sweep_steps);

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "compare a calibration against ground truth");
  s_ev->add_option("--calib", ev.calib, "calib_result.json or gt.json")->required()->check(existing);
  s_ev->add_option("--gt", ev.gt, "gt.json")->required()->check(existing);
  s_ev->add_option("--cloud", ev.cloud, "for edge RMSE")->check(existing);
  s_ev->add_option("--image", ev.image, "for edge RMSE")->check(existing);
  s_ev->add_option("--out", ev.out, "report JSON");

  EdgesDebugArgs ed;
  auto* s_ed = app.add_subcommand("edges-debug", "dump edge masks, distance field and spherical image");
  s_ed->add_option("--image", ed.image)->check(existing);
  s_ed->add_option("--cloud", ed.cloud)->check(existing);
  s_ed->add_option("--out", ed.out, "output directory")->required();
  s_ed->add_option("--sigma", ed.sigma);
  s_ed->add_option("--low", ed.low);
  s_ed->add_option("--high", ed.high);
  s_ed->add_option("--n-az", ed.n_az);
  s_ed->add_option("--n-el", ed.n_el);
  s_ed->add_option("--g-min", ed.g_min);
  s_ed->add_option("--depth-rel-max", ed.depth_rel_max);

  ColorizeArgs co;
  auto* s_co = app.add_subcommand("colorize", "color a cloud from calibrated images");
  s_co->add_option("--cloud", co.cloud, "cloud in the world frame")->required()->check(existing);
  s_co->add_option("--image", co.images, "PPM/PGM images")->required()->check(existing);
  s_co->add_option("--poses", co.poses, "rig pose per image (default identity)")->check(existing);
  s_co->add_option("--calib", co.calib, "calib_result.json or gt.json")->required()->check(existing);
  s_co->add_option("--out", co.out, "colored PLY")->required();
  s_co->add_option("--splat", co.splat, "z-buffer splat radius in pixels");
  s_co->add_option("--tolerance", co.tolerance, "depth tolerance in meters");

  AssembleArgs as;
  auto* s_as = app.add_subcommand("assemble", "coarse map from scans and odometry poses");
  s_as->add_option("--scans", as.scans)->required()->check(existing);
  s_as->add_option("--poses", as.poses)->required()->check(existing);
  s_as->add_option("--voxel", as.voxel);
  s_as->add_option("--out", as.out)->required();

  StitchArgs st;
  auto* s_st = app.add_subcommand("stitch", "register fine scans into a coarse map and fuse");
  s_st->add_option("--coarse", st.coarse)->required()->check(existing);
  s_st->add_option("--fine", st.fine)->required()->check(existing);
  s_st->add_option("--init", st.init, "initial pose per fine scan (default identity)")->check(existing);
  s_st->add_option("--out", st.out, "merged PLY")->required();
  s_st->add_option("--report", st.report, "stitch report JSON");
  s_st->add_option("--fusion-voxel", st.fusion_voxel);
  s_st->add_option("--max-iters", st.icp.max_iterations);
  s_st->add_option("--d0", st.icp.max_corr_dist);
  s_st->add_option("--gamma", st.icp.decay);
  s_st->add_option("--normal-k", st.icp.normal_k);

  ViewpointsArgs vp;
  auto* s_vp = app.add_subcommand("viewpoints", "propose fine-scan viewpoints around an ROI");
  s_vp->add_option("--map", vp.map)->required()->check(existing);
  s_vp->add_option("--roi-min", vp.roi_min)->required()->expected(3);
  s_vp->add_option("--roi-max", vp.roi_max)->required()->expected(3);
  s_vp->add_option("--k", vp.k);
  s_vp->add_option("--clearance", vp.clearance);
  s_vp->add_option("--voxel", vp.voxel);
  s_vp->add_option("--out", vp.out)->required();

  ReproArgs rp;
  auto* s_rp = app.add_subcommand("repro", "simulate, perturb, calibrate (edge and MI) and compare");
  s_rp->alias("run-repro");
  s_rp->add_option("--out", rp.out, "output directory");
  s_rp->add_option("--config", rp.config, "scene.json override")->check(existing);
  s_rp->add_flag("--non-lambertian", rp.non_lambertian);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (*seed_opt) common.seed = seed;
  set_num_threads(common.threads);

  try {
    if (*s_sim) return cmd_simulate(sim, common);
    if (*s_cal) return cmd_calibrate(cal, common);
    if (*s_mi) return cmd_calibrate_mi(mi, common);
    if (*s_ev) return cmd_evaluate(ev, common);
    if (*s_ed) return cmd_edges_debug(ed, common);
    if (*s_co) return cmd_colorize(co, common);
    if (*s_as) return cmd_assemble(as, common);
    if (*s_st) return cmd_stitch(st, common);
    if (*s_vp) return cmd_viewpoints(vp, common);
    if (*s_rp) return cmd_repro(rp, common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Input ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace hycal::cli
