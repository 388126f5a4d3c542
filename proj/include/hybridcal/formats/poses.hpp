#pragma once

// Pose lists: one "t tx ty tz qx qy qz qw" record per line, '#' starts a comment.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hybridcal/formats/io.hpp"
#include "hybridcal/geom.hpp"

namespace hycal {

struct PoseRecord {
  double timestamp = 0;
  Pose pose;
};

inline std::vector<PoseRecord> parse_poses(std::string_view text) {
  std::vector<PoseRecord> out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);

    double v[8];
    int count = 0;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ',')) ++i;
      if (i >= line.size()) break;
      if (count == 8) throw ParseError("line " + std::to_string(line_no) + ": more than 8 fields");
      auto [ptr, ec] = std::from_chars(line.data() + i, line.data() + line.size(), v[count]);
      if (ec != std::errc() || !std::isfinite(v[count]))
        throw ParseError("line " + std::to_string(line_no) + ": bad number");
      i = static_cast<std::size_t>(ptr - line.data());
      if (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r' && line[i] != ',')
        throw ParseError("line " + std::to_string(line_no) + ": bad number");
      ++count;
    }
    if (count == 0) continue;
    if (count != 8) throw ParseError("line " + std::to_string(line_no) + ": expected 8 fields, got " + std::to_string(count));
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 1e-6)) throw ParseError("line " + std::to_string(line_no) + ": degenerate quaternion");
    PoseRecord rec{v[0], Pose(q.normalized(), Vec3(v[1], v[2], v[3]))};
    if (!out.empty() && !(rec.timestamp > out.back().timestamp))
      throw NonMonotonicTimestamps("line " + std::to_string(line_no) + ": timestamp " + std::to_string(rec.timestamp) +
                                   " does not increase");
    out.push_back(rec);
  }
  return out;
}

inline std::vector<PoseRecord> read_poses(const std::filesystem::path& path) { return parse_poses(read_file(path)); }

inline std::string serialize_poses(const std::vector<PoseRecord>& poses) {
  std::string out = "# t tx ty tz qx qy qz qw\n";
  char buf[512];
  for (const auto& r : poses) {
    const auto& q = r.pose.rotation;
    const auto& t = r.pose.translation;
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", r.timestamp, t.x(), t.y(),
                  t.z(), q.x(), q.y(), q.z(), q.w());
    out += buf;
  }
  return out;
}

inline void write_poses(const std::filesystem::path& path, const std::vector<PoseRecord>& poses) {
  write_file_atomic(path, serialize_poses(poses));
}

}  // namespace hycal
