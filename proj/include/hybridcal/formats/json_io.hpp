#pragma once

// JSON documents: scene config, calibration init/result, ground truth, MI
// result, stitch and viewpoint reports. Readers are strict: unknown keys and
// wrong types raise SchemaError naming the key path.

#include <array>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hybridcal/calib.hpp"
#include "hybridcal/error.hpp"
#include "hybridcal/formats/io.hpp"
#include "hybridcal/geom.hpp"
#include "hybridcal/mapping.hpp"
#include "hybridcal/mi.hpp"
#include "hybridcal/simulate.hpp"

namespace hycal {

using Json = nlohmann::ordered_json;

namespace jsonio {

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline double as_double(const Json& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError("\"" + path + "\" must be a number");
  return v.get<double>();
}

inline long long as_int(const Json& v, const std::string& path) {
  if (v.is_number_integer() || v.is_number_unsigned()) return v.get<long long>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<long long>(d);
  }
  throw SchemaError("\"" + path + "\" must be an integer");
}

inline bool as_bool(const Json& v, const std::string& path) {
  if (!v.is_boolean()) throw SchemaError("\"" + path + "\" must be a boolean");
  return v.get<bool>();
}

inline std::string as_string(const Json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError("\"" + path + "\" must be a string");
  return v.get<std::string>();
}

inline std::vector<double> as_numbers(const Json& v, const std::string& path, std::size_t n = 0) {
  if (!v.is_array() || (n && v.size() != n))
    throw SchemaError("\"" + path + "\" must be an array of " + (n ? std::to_string(n) + " " : "") + "numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_double(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline Vec3 as_vec3(const Json& v, const std::string& path) {
  const auto a = as_numbers(v, path, 3);
  return {a[0], a[1], a[2]};
}

// Tracks which keys were consumed so leftovers can be reported.
class Obj {
 public:
  Obj(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw SchemaError("\"" + (path_.empty() ? std::string("<root>") : path_) + "\" must be an object");
  }

  const Json* find(const std::string& key) {
    known_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  const Json& require(const std::string& key) {
    const Json* v = find(key);
    if (!v) throw SchemaError("missing required key \"" + sub(key) + "\"");
    return *v;
  }
  std::string sub(const std::string& key) const { return join(path_, key); }

  void opt(const std::string& key, double& out) {
    if (const Json* v = find(key)) out = as_double(*v, sub(key));
  }
  void opt(const std::string& key, int& out) {
    if (const Json* v = find(key)) out = static_cast<int>(as_int(*v, sub(key)));
  }
  void opt(const std::string& key, std::uint64_t& out) {
    if (const Json* v = find(key)) {
      const long long x = as_int(*v, sub(key));
      if (x < 0) throw SchemaError("\"" + sub(key) + "\" must be non-negative");
      out = static_cast<std::uint64_t>(x);
    }
  }
  void opt(const std::string& key, bool& out) {
    if (const Json* v = find(key)) out = as_bool(*v, sub(key));
  }
  void opt(const std::string& key, Vec3& out) {
    if (const Json* v = find(key)) out = as_vec3(*v, sub(key));
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!known_.count(item.key())) throw SchemaError("unknown key \"" + join(path_, item.key()) + "\"");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> known_;
};

inline Json parse_text(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
}

inline Json read_json(const std::filesystem::path& path) {
  try {
    return parse_text(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// Rejects NaN/inf, which JSON cannot carry.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json vec(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

template <typename C>
Json numbers(const C& c) {
  Json a = Json::array();
  for (double v : c) a.push_back(num(v));
  return a;
}

}  // namespace jsonio

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

inline Json pose_to_json(const Pose& p) {
  const auto& q = p.rotation;
  return {{"q", Json::array({q.w(), q.x(), q.y(), q.z()})}, {"t", jsonio::vec(p.translation)}};
}

inline Pose pose_from_json(const Json& j, const std::string& path) {
  jsonio::Obj o(j, path);
  const auto q = jsonio::as_numbers(o.require("q"), o.sub("q"), 4);
  const Vec3 t = jsonio::as_vec3(o.require("t"), o.sub("t"));
  o.finish();
  const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  if (!(quat.norm() > 1e-6)) throw SchemaError("\"" + o.sub("q") + "\" is not a valid quaternion");
  return {quat, t};
}

inline Json intrinsics_to_json(const CameraIntrinsics& c) {
  return {{"fx", c.fx()},
          {"fy", c.fy()},
          {"cx", c.cx()},
          {"cy", c.cy()},
          {"k", jsonio::numbers(c.k())},
          {"width", c.width()},
          {"height", c.height()},
          {"theta_max", c.theta_max()}};
}

// Missing keys fall back to base.
inline CameraIntrinsics intrinsics_from_json(const Json& j, const std::string& path, const CameraIntrinsics& base) {
  jsonio::Obj o(j, path);
  double fx = base.fx(), fy = base.fy(), cx = base.cx(), cy = base.cy(), theta_max = base.theta_max();
  int width = base.width(), height = base.height();
  std::array<double, 4> k = base.k();
  o.opt("fx", fx);
  o.opt("fy", fy);
  o.opt("cx", cx);
  o.opt("cy", cy);
  o.opt("width", width);
  o.opt("height", height);
  o.opt("theta_max", theta_max);
  if (const Json* v = o.find("k")) {
    const auto a = jsonio::as_numbers(*v, o.sub("k"), 4);
    std::copy(a.begin(), a.end(), k.begin());
  }
  o.finish();
  return CameraIntrinsics(fx, fy, cx, cy, k, width, height, theta_max);
}

// ---------------------------------------------------------------------------
// scene.json
// ---------------------------------------------------------------------------

inline std::string pattern_name(PatternType t) {
  switch (t) {
    case PatternType::Uniform: return "uniform";
    case PatternType::Checker: return "checker";
    case PatternType::Stripe: return "stripe";
  }
  return "checker";
}

inline PatternType pattern_from_name(const std::string& s, const std::string& path) {
  if (s == "uniform") return PatternType::Uniform;
  if (s == "checker") return PatternType::Checker;
  if (s == "stripe") return PatternType::Stripe;
  throw SchemaError("\"" + path + "\" must be one of uniform, checker, stripe");
}

inline Json face_to_json(const FacePattern& f) {
  return {{"type", pattern_name(f.type)},  {"cell", f.cell}, {"albedo_low", f.albedo_low},
          {"albedo_high", f.albedo_high}, {"gain", f.gain}, {"tint", jsonio::vec(f.tint)}};
}

inline void face_from_json(const Json& j, const std::string& path, FacePattern& f) {
  jsonio::Obj o(j, path);
  if (const Json* v = o.find("type")) f.type = pattern_from_name(jsonio::as_string(*v, o.sub("type")), o.sub("type"));
  o.opt("cell", f.cell);
  o.opt("albedo_low", f.albedo_low);
  o.opt("albedo_high", f.albedo_high);
  o.opt("gain", f.gain);
  o.opt("tint", f.tint);
  o.finish();
}

inline Json scene_config_to_json(const SimConfig& c) {
  Json faces = Json::array();
  for (const auto& f : c.scene.faces) faces.push_back(face_to_json(f));
  Json boxes = Json::array();
  for (const auto& b : c.scene.boxes)
    boxes.push_back({{"min", jsonio::vec(b.min)},
                     {"max", jsonio::vec(b.max)},
                     {"albedo", b.albedo},
                     {"gain", b.gain},
                     {"tint", jsonio::vec(b.tint)}});
  return {{"room", {{"min", jsonio::vec(c.scene.room_min)}, {"max", jsonio::vec(c.scene.room_max)}}},
          {"faces", faces},
          {"boxes", boxes},
          {"intrinsics", intrinsics_to_json(c.intrinsics)},
          {"camera_pose", pose_to_json(c.camera_pose)},
          {"extrinsic", pose_to_json(c.extrinsic)},
          {"scan",
           {{"f1", c.scan.f1},
            {"f2", c.scan.f2},
            {"cone_half_angle", c.scan.cone_half_angle},
            {"rate", c.scan.rate},
            {"duration", c.scan.duration}}},
          {"noise", {{"range_sigma", c.noise.range_sigma}, {"reflectivity_sigma", c.noise.reflectivity_sigma}}},
          {"seed", c.seed},
          {"supersample", c.supersample},
          {"non_lambertian", c.non_lambertian},
          {"gain_range", Json::array({c.gain_min, c.gain_max})}};
}

// Every key is optional; "pattern" sets all six faces, "faces" then overrides per face.
inline SimConfig scene_config_from_json(const Json& j) {
  SimConfig c;
  jsonio::Obj o(j, "");
  if (const Json* v = o.find("room")) {
    jsonio::Obj r(*v, "room");
    r.opt("min", c.scene.room_min);
    r.opt("max", c.scene.room_max);
    r.finish();
  }
  if (const Json* v = o.find("pattern"))
    for (auto& f : c.scene.faces) face_from_json(*v, "pattern", f);
  if (const Json* v = o.find("faces")) {
    if (!v->is_array() || v->size() != 6) throw SchemaError("\"faces\" must be an array of 6 face objects");
    for (std::size_t i = 0; i < 6; ++i) face_from_json((*v)[i], "faces[" + std::to_string(i) + "]", c.scene.faces[i]);
  }
  if (const Json* v = o.find("boxes")) {
    if (!v->is_array()) throw SchemaError("\"boxes\" must be an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      InteriorBox b;
      jsonio::Obj bo((*v)[i], "boxes[" + std::to_string(i) + "]");
      b.min = jsonio::as_vec3(bo.require("min"), bo.sub("min"));
      b.max = jsonio::as_vec3(bo.require("max"), bo.sub("max"));
      bo.opt("albedo", b.albedo);
      bo.opt("gain", b.gain);
      bo.opt("tint", b.tint);
      bo.finish();
      c.scene.boxes.push_back(b);
    }
  }
  if (const Json* v = o.find("intrinsics")) c.intrinsics = intrinsics_from_json(*v, "intrinsics", c.intrinsics);
  if (const Json* v = o.find("camera_pose")) c.camera_pose = pose_from_json(*v, "camera_pose");
  if (const Json* v = o.find("extrinsic")) c.extrinsic = pose_from_json(*v, "extrinsic");
  if (const Json* v = o.find("scan")) {
    jsonio::Obj s(*v, "scan");
    s.opt("f1", c.scan.f1);
    s.opt("f2", c.scan.f2);
    s.opt("cone_half_angle", c.scan.cone_half_angle);
    s.opt("rate", c.scan.rate);
    s.opt("duration", c.scan.duration);
    s.finish();
  }
  if (const Json* v = o.find("noise")) {
    jsonio::Obj s(*v, "noise");
    s.opt("range_sigma", c.noise.range_sigma);
    s.opt("reflectivity_sigma", c.noise.reflectivity_sigma);
    s.finish();
  }
  o.opt("seed", c.seed);
  o.opt("supersample", c.supersample);
  o.opt("non_lambertian", c.non_lambertian);
  if (const Json* v = o.find("gain_range")) {
    const auto g = jsonio::as_numbers(*v, "gain_range", 2);
    c.gain_min = g[0];
    c.gain_max = g[1];
  }
  o.finish();
  if (c.supersample < 1) throw SchemaError("\"supersample\" must be >= 1");
  if (!(c.noise.range_sigma >= 0) || !(c.noise.reflectivity_sigma >= 0))
    throw SchemaError("noise sigmas must be non-negative");
  if (!(c.gain_min > 0 && c.gain_min <= c.gain_max)) throw SchemaError("\"gain_range\" must satisfy 0 < lo <= hi");
  c.scene.validate();
  c.scan.validate();
  return c;
}

// ---------------------------------------------------------------------------
// gt.json
// ---------------------------------------------------------------------------

inline Json gt_to_json(const GroundTruth& gt, std::uint64_t seed) {
  return {{"intrinsics", intrinsics_to_json(gt.intrinsics)},
          {"extrinsic", pose_to_json(gt.extrinsic)},
          {"camera_pose", pose_to_json(gt.camera_pose)},
          {"lidar_pose", pose_to_json(gt.lidar_pose)},
          {"seed", seed}};
}

inline GroundTruth gt_from_json(const Json& j) {
  jsonio::Obj o(j, "");
  GroundTruth gt{intrinsics_from_json(o.require("intrinsics"), "intrinsics", default_intrinsics()),
                 pose_from_json(o.require("extrinsic"), "extrinsic"),
                 pose_from_json(o.require("camera_pose"), "camera_pose"),
                 pose_from_json(o.require("lidar_pose"), "lidar_pose")};
  std::uint64_t seed = 0;
  o.opt("seed", seed);
  o.finish();
  return gt;
}

// ---------------------------------------------------------------------------
// calib_init.json / calib_result.json
// ---------------------------------------------------------------------------

inline Json free_params_to_json(unsigned mask) {
  Json a = Json::array();
  if (mask & kRot) a.push_back("rot");
  if (mask & kTrans) a.push_back("trans");
  if (mask & kFocal) a.push_back("focal");
  if (mask & kPrincipal) a.push_back("principal");
  if (mask & kDistortion) a.push_back("distortion");
  return a;
}

inline unsigned free_params_from_json(const Json& j, const std::string& path) {
  if (j.is_string() && j.get<std::string>() == "all") return kAllParams;
  if (!j.is_array()) throw SchemaError("\"" + path + "\" must be \"all\" or an array of parameter group names");
  unsigned mask = 0;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string s = jsonio::as_string(j[i], path + "[" + std::to_string(i) + "]");
    if (s == "rot") mask |= kRot;
    else if (s == "trans") mask |= kTrans;
    else if (s == "focal") mask |= kFocal;
    else if (s == "principal") mask |= kPrincipal;
    else if (s == "distortion") mask |= kDistortion;
    else if (s == "all") mask |= kAllParams;
    else throw SchemaError("\"" + path + "\" has unknown parameter group \"" + s + "\"");
  }
  if (!mask) throw InvalidStage("\"" + path + "\" frees no parameters");
  return mask;
}

inline Json stage_to_json(const Stage& s) {
  return {{"level", s.pyramid_level},
          {"free", free_params_to_json(s.free_params)},
          {"max_iters", s.max_iters},
          {"huber_delta", s.huber_delta}};
}

inline Stage stage_from_json(jsonio::Obj& o) {
  Stage s;
  o.opt("level", s.pyramid_level);
  s.free_params = free_params_from_json(o.require("free"), o.sub("free"));
  o.opt("max_iters", s.max_iters);
  o.opt("huber_delta", s.huber_delta);
  if (s.pyramid_level < 0 || s.max_iters < 1 || !(s.huber_delta > 0))
    throw InvalidStage("stage needs level >= 0, max_iters >= 1, huber_delta > 0");
  return s;
}

struct CalibInit {
  CameraIntrinsics intr;
  Pose extr;
  CalibOptions options;
};

inline Json calib_init_to_json(const CalibInit& c) {
  Json stages = Json::array();
  for (const auto& s : c.options.schedule) stages.push_back(stage_to_json(s));
  const auto& cp = c.options.canny;
  const auto& lp = c.options.lidar;
  Json j = {{"intrinsics", intrinsics_to_json(c.intr)},
            {"extrinsic", pose_to_json(c.extr)},
            {"pyramid_levels", c.options.pyramid_levels},
            {"canny", {{"sigma", cp.sigma}, {"low", cp.low}, {"high", cp.high}, {"relative", cp.relative}}},
            {"lidar_edges",
             {{"n_az", lp.n_az},
              {"n_el", lp.n_el},
              {"g_min", lp.g_min},
              {"depth_rel_max", lp.depth_rel_max},
              {"min_count", lp.min_count}}},
            {"rotation_search",
             {{"half_steps", c.options.search.half_steps}, {"step_deg", rad2deg(c.options.search.step)}}}};
  if (!stages.empty()) j["schedule"] = stages;
  return j;
}

inline CalibInit calib_init_from_json(const Json& j) {
  jsonio::Obj o(j, "");
  CalibInit c{intrinsics_from_json(o.require("intrinsics"), "intrinsics", default_intrinsics()),
              pose_from_json(o.require("extrinsic"), "extrinsic"),
              {}};
  o.opt("pyramid_levels", c.options.pyramid_levels);
  if (c.options.pyramid_levels < 1) throw InvalidStage("\"pyramid_levels\" must be >= 1");
  if (const Json* v = o.find("canny")) {
    jsonio::Obj s(*v, "canny");
    s.opt("sigma", c.options.canny.sigma);
    s.opt("low", c.options.canny.low);
    s.opt("high", c.options.canny.high);
    s.opt("relative", c.options.canny.relative);
    s.finish();
  }
  if (const Json* v = o.find("lidar_edges")) {
    jsonio::Obj s(*v, "lidar_edges");
    auto& lp = c.options.lidar;
    s.opt("n_az", lp.n_az);
    s.opt("n_el", lp.n_el);
    s.opt("g_min", lp.g_min);
    s.opt("depth_rel_max", lp.depth_rel_max);
    s.opt("min_count", lp.min_count);
    s.finish();
    if (lp.n_az < 3 || lp.n_el < 3 || lp.min_count < 1) throw SchemaError("\"lidar_edges\" grid too small");
  }
  if (const Json* v = o.find("rotation_search")) {
    jsonio::Obj s(*v, "rotation_search");
    double step_deg = rad2deg(c.options.search.step);
    s.opt("half_steps", c.options.search.half_steps);
    s.opt("step_deg", step_deg);
    s.finish();
    if (c.options.search.half_steps < 0 || !(step_deg > 0))
      throw SchemaError("\"rotation_search\" needs half_steps >= 0 and step_deg > 0");
    c.options.search.step = deg2rad(step_deg);
  }
  if (const Json* v = o.find("schedule")) {
    if (!v->is_array() || v->empty()) throw SchemaError("\"schedule\" must be a non-empty array of stages");
    for (std::size_t i = 0; i < v->size(); ++i) {
      jsonio::Obj s((*v)[i], "schedule[" + std::to_string(i) + "]");
      c.options.schedule.push_back(stage_from_json(s));
      s.finish();
      if (c.options.schedule.back().pyramid_level >= c.options.pyramid_levels)
        throw InvalidStage("schedule[" + std::to_string(i) + "] uses a level beyond pyramid_levels");
    }
  }
  o.finish();
  return c;
}

inline Json calib_result_to_json(const CalibResult& r, bool with_timing = false) {
  Json stages = Json::array();
  for (const auto& s : r.stages) {
    Json js = stage_to_json(s.stage);
    js["cost_history"] = jsonio::numbers(s.cost_history);
    js["iterations"] = s.iterations;
    js["accepted_steps"] = s.accepted_steps;
    js["termination"] = s.termination;
    stages.push_back(js);
  }
  Json j = {{"intrinsics", intrinsics_to_json(r.intr)},
            {"extrinsic", pose_to_json(r.extr)},
            {"stages", stages},
            {"inliers", r.inliers},
            {"termination", r.termination},
            {"condition_number", jsonio::num(r.condition_number)},
            {"search_offset_rad", jsonio::vec(r.search_offset)}};
  if (with_timing) j["wall_time_s"] = r.wall_time_s;
  return j;
}

inline CalibResult calib_result_from_json(const Json& j) {
  jsonio::Obj o(j, "");
  CalibResult r{intrinsics_from_json(o.require("intrinsics"), "intrinsics", default_intrinsics()),
                pose_from_json(o.require("extrinsic"), "extrinsic"),
                {},
                0,
                "",
                0,
                0};
  if (const Json* v = o.find("stages")) {
    if (!v->is_array()) throw SchemaError("\"stages\" must be an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      jsonio::Obj s((*v)[i], "stages[" + std::to_string(i) + "]");
      StageReport rep;
      rep.stage = stage_from_json(s);
      if (const Json* h = s.find("cost_history")) rep.cost_history = jsonio::as_numbers(*h, s.sub("cost_history"));
      s.opt("iterations", rep.iterations);
      s.opt("accepted_steps", rep.accepted_steps);
      if (const Json* t = s.find("termination")) rep.termination = jsonio::as_string(*t, s.sub("termination"));
      s.finish();
      r.stages.push_back(std::move(rep));
    }
  }
  if (const Json* v = o.find("inliers")) r.inliers = static_cast<std::size_t>(jsonio::as_int(*v, "inliers"));
  if (const Json* v = o.find("termination")) r.termination = jsonio::as_string(*v, "termination");
  if (const Json* v = o.find("condition_number"))
    r.condition_number = v->is_null() ? std::numeric_limits<double>::infinity() : jsonio::as_double(*v, "condition_number");
  o.opt("search_offset_rad", r.search_offset);
  o.opt("wall_time_s", r.wall_time_s);
  o.finish();
  return r;
}

// Either a calib_result or a gt document: both carry intrinsics + extrinsic.
inline CalibParams calib_params_from_json(const Json& j) {
  if (j.is_object() && j.contains("camera_pose")) {
    const GroundTruth gt = gt_from_json(j);
    return {gt.intrinsics, gt.extrinsic};
  }
  const CalibResult r = calib_result_from_json(j);
  return {r.intr, r.extr};
}

inline Json calib_report_to_json(const CalibReport& r) {
  Json j = {{"rot_err_deg", r.rot_err_deg}, {"trans_err_mm", r.trans_err_mm}, {"fx_rel", r.fx_rel},
            {"fy_rel", r.fy_rel},           {"cx_rel", r.cx_rel},             {"cy_rel", r.cy_rel},
            {"k_abs", jsonio::numbers(r.k_abs)}};
  if (r.edge_rmse_px) j["edge_rmse_px"] = jsonio::num(*r.edge_rmse_px);
  return j;
}

// ---------------------------------------------------------------------------
// Other results
// ---------------------------------------------------------------------------

inline Json mi_result_to_json(const MiResult& r, const MiOptions& opt) {
  return {{"extrinsic", pose_to_json(r.extr)},
          {"mi", r.mi},
          {"trace", jsonio::numbers(r.trace)},
          {"evaluations", r.evaluations},
          {"options",
           {{"bins", opt.bins},
            {"rot_step_deg", rad2deg(opt.rot_step)},
            {"trans_step", opt.trans_step},
            {"spread_tol", opt.spread_tol},
            {"max_evals", opt.max_evals},
            {"max_points", opt.max_points},
            {"smoothing_sigma", opt.smoothing_sigma}}}};
}

inline Json stitch_report_to_json(const StitchReport& r, std::size_t index) {
  Json j = {{"index", index},
            {"pose", pose_to_json(r.pose)},
            {"rms_history", jsonio::numbers(r.rms_history)},
            {"inlier_fraction", r.inlier_fraction},
            {"converged", r.converged},
            {"iterations", r.iterations}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline Json viewpoints_to_json(const std::vector<Viewpoint>& vps) {
  Json a = Json::array();
  for (const auto& v : vps) a.push_back({{"pose", pose_to_json(v.pose)}, {"gain", v.gain}});
  return {{"viewpoints", a}};
}

}  // namespace hycal
