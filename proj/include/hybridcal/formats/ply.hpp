#pragma once

// PLY point clouds. The writer emits binary little-endian with the fixed
// property order x,y,z (float32), reflectivity (float32), t (float64) and, for
// colored clouds, red,green,blue (uint8). The reader accepts ascii and binary
// little-endian files with arbitrary extra properties and elements.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hybridcal/cloud.hpp"
#include "hybridcal/formats/io.hpp"

namespace hycal {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

namespace ply_detail {

enum class Scalar { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline std::optional<Scalar> parse_scalar(std::string_view s) {
  if (s == "char" || s == "int8") return Scalar::Int8;
  if (s == "uchar" || s == "uint8") return Scalar::UInt8;
  if (s == "short" || s == "int16") return Scalar::Int16;
  if (s == "ushort" || s == "uint16") return Scalar::UInt16;
  if (s == "int" || s == "int32") return Scalar::Int32;
  if (s == "uint" || s == "uint32") return Scalar::UInt32;
  if (s == "float" || s == "float32") return Scalar::Float32;
  if (s == "double" || s == "float64") return Scalar::Float64;
  return std::nullopt;
}

inline std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::Int8:
    case Scalar::UInt8: return 1;
    case Scalar::Int16:
    case Scalar::UInt16: return 2;
    case Scalar::Int32:
    case Scalar::UInt32:
    case Scalar::Float32: return 4;
    case Scalar::Float64: return 8;
  }
  return 0;
}

inline bool is_integer(Scalar s) { return s != Scalar::Float32 && s != Scalar::Float64; }

struct Property {
  std::string name;
  Scalar type;
  bool is_list = false;
  Scalar count_type = Scalar::UInt8;
};

struct Element {
  std::string name;
  std::uint64_t count = 0;
  std::vector<Property> props;
};

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t b = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

inline double read_binary(const char* p, Scalar s) {
  switch (s) {
    case Scalar::Int8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case Scalar::UInt8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case Scalar::Int16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case Scalar::UInt16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case Scalar::Int32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case Scalar::UInt32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case Scalar::Float32: { float v; std::memcpy(&v, p, 4); return v; }
    case Scalar::Float64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace ply_detail

inline ReflectivityCloud parse_ply(std::string_view bytes) {
  using namespace ply_detail;
  std::size_t pos = 0;
  int line_no = 0;
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (pos >= bytes.size()) return std::nullopt;
    const std::size_t nl = bytes.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? bytes.size() : nl;
    std::string_view line = bytes.substr(pos, end - pos);
    pos = nl == std::string_view::npos ? bytes.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  };
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("line " + std::to_string(line_no) + ": " + msg);
  };

  auto magic = next_line();
  if (!magic || *magic != "ply") throw ParseError("line 1: missing 'ply' magic");

  bool ascii = false, have_format = false;
  std::vector<Element> elements;
  for (;;) {
    auto line = next_line();
    if (!line) throw fail("unexpected end of header");
    const auto tok = split_ws(*line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() != 3) throw fail("malformed format line");
      if (tok[1] == "ascii") ascii = true;
      else if (tok[1] == "binary_little_endian") ascii = false;
      else if (tok[1] == "binary_big_endian") throw UnsupportedFormat("big-endian PLY is not supported");
      else throw fail("unknown format '" + std::string(tok[1]) + "'");
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw fail("malformed element line");
      Element e;
      e.name = std::string(tok[1]);
      auto [ptr, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), e.count);
      if (ec != std::errc() || ptr != tok[2].data() + tok[2].size()) throw fail("bad element count");
      elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (elements.empty()) throw fail("property before any element");
      Property p;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = parse_scalar(tok[2]);
        auto it = parse_scalar(tok[3]);
        if (!ct || !it || !is_integer(*ct)) throw fail("bad list property types");
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = std::string(tok[4]);
      } else if (tok.size() == 3) {
        auto t = parse_scalar(tok[1]);
        if (!t) throw fail("unknown property type '" + std::string(tok[1]) + "'");
        p.type = *t;
        p.name = std::string(tok[2]);
      } else {
        throw fail("malformed property line");
      }
      elements.back().props.push_back(std::move(p));
    } else {
      throw fail("unexpected header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!have_format) throw fail("missing format line");

  ReflectivityCloud cloud;
  bool found_vertex = false;

  for (const Element& e : elements) {
    const bool is_vertex = e.name == "vertex";
    if (is_vertex && found_vertex) throw fail("duplicate vertex element");
    int ix = -1, iy = -1, iz = -1, irefl = -1, iint = -1, it = -1, ir = -1, ig = -1, ib = -1;
    for (int i = 0; i < static_cast<int>(e.props.size()); ++i) {
      const auto& n = e.props[i].name;
      if (e.props[i].is_list) continue;
      if (n == "x") ix = i;
      else if (n == "y") iy = i;
      else if (n == "z") iz = i;
      else if (n == "reflectivity") irefl = i;
      else if (n == "intensity") iint = i;
      else if (n == "t" || n == "timestamp") it = i;
      else if (n == "red") ir = i;
      else if (n == "green") ig = i;
      else if (n == "blue") ib = i;
    }
    if (is_vertex) {
      if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex element lacks x/y/z properties");
      found_vertex = true;
    }
    const bool colored = is_vertex && ir >= 0 && ig >= 0 && ib >= 0;

    // Guard allocations against absurd counts before touching the payload.
    std::size_t min_row = 0;
    for (const auto& p : e.props) min_row += p.is_list ? scalar_size(p.count_type) : scalar_size(p.type);
    const std::size_t remaining = bytes.size() - pos;
    if (!ascii && min_row > 0 && e.count > remaining / min_row)
      throw ParseError("truncated binary payload at byte offset " + std::to_string(bytes.size()) +
                       " (element '" + e.name + "' needs more data)");
    if (ascii && e.count > remaining / 2 + 1)
      throw ParseError("line " + std::to_string(line_no + 1) + ": element '" + e.name + "' count exceeds data");

    std::vector<double> row(e.props.size());
    std::vector<double> intensities;
    if (is_vertex) {
      cloud.reserve(e.count);
      if (colored) {
        cloud.colors.reserve(e.count);
        cloud.colored.reserve(e.count);
      }
    }
    for (std::uint64_t r = 0; r < e.count; ++r) {
      if (ascii) {
        auto line = next_line();
        if (!line) throw ParseError("line " + std::to_string(line_no + 1) + ": unexpected end of data");
        const auto tok = split_ws(*line);
        std::size_t ti = 0;
        auto number = [&]() -> double {
          if (ti >= tok.size()) throw fail("too few values in row");
          double v;
          auto [ptr, ec] = std::from_chars(tok[ti].data(), tok[ti].data() + tok[ti].size(), v);
          if (ec != std::errc() || ptr != tok[ti].data() + tok[ti].size())
            throw fail("bad number '" + std::string(tok[ti]) + "'");
          ++ti;
          return v;
        };
        for (std::size_t pi = 0; pi < e.props.size(); ++pi) {
          const auto& p = e.props[pi];
          if (p.is_list) {
            const double n = number();
            if (!(n >= 0) || n > static_cast<double>(tok.size())) throw fail("bad list length");
            for (int k = 0; k < static_cast<int>(n); ++k) number();
            row[pi] = 0;
          } else {
            row[pi] = number();
          }
        }
        if (ti != tok.size()) throw fail("too many values in row");
      } else {
        for (std::size_t pi = 0; pi < e.props.size(); ++pi) {
          const auto& p = e.props[pi];
          auto need = [&](std::size_t n) {
            if (bytes.size() - pos < n)
              throw ParseError("truncated binary payload at byte offset " + std::to_string(pos));
          };
          if (p.is_list) {
            need(scalar_size(p.count_type));
            const double n = read_binary(bytes.data() + pos, p.count_type);
            pos += scalar_size(p.count_type);
            if (n < 0) throw ParseError("negative list length at byte offset " + std::to_string(pos));
            const auto len = static_cast<std::uint64_t>(n) * scalar_size(p.type);
            need(len);
            pos += len;
            row[pi] = 0;
          } else {
            need(scalar_size(p.type));
            row[pi] = read_binary(bytes.data() + pos, p.type);
            pos += scalar_size(p.type);
          }
        }
      }
      if (!is_vertex) continue;
      const Vec3 pt(row[ix], row[iy], row[iz]);
      if (!pt.allFinite()) throw ParseError("non-finite coordinate in vertex " + std::to_string(r));
      double refl = 0.5;
      if (irefl >= 0) refl = row[irefl];
      else if (iint >= 0) {
        refl = row[iint];
        intensities.push_back(refl);
      }
      const double t = it >= 0 ? row[it] : 0.0;
      if (!std::isfinite(refl) || !std::isfinite(t)) throw ParseError("non-finite attribute in vertex " + std::to_string(r));
      cloud.push_back(pt, std::clamp(refl, 0.0, 1.0), t);
      if (colored) {
        cloud.colors.push_back(Vec3(row[ir], row[ig], row[ib]) / 255.0);
        cloud.colored.push_back(1);
      }
    }
    if (is_vertex && irefl < 0 && iint >= 0) {
      // Integer-coded intensities (0..255) are rescaled to [0,1].
      bool integer_coded = is_integer(e.props[iint].type);
      for (double v : intensities) integer_coded = integer_coded || v > 1.0;
      for (std::size_t i = 0; i < intensities.size(); ++i) {
        const double v = integer_coded ? intensities[i] / 255.0 : intensities[i];
        cloud.reflectivity[i] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  if (!found_vertex) throw ParseError("no vertex element");
  return cloud;
}

inline ReflectivityCloud read_ply(const std::filesystem::path& path) { return parse_ply(read_file(path)); }

inline std::string serialize_ply(const ReflectivityCloud& cloud) {
  using ply_detail::put;
  const bool colored = cloud.has_colors();
  std::string out;
  out += "ply\nformat binary_little_endian 1.0\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  out += "property float reflectivity\nproperty double t\n";
  if (colored) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  out.reserve(out.size() + cloud.size() * (colored ? 27 : 24));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put(out, static_cast<float>(cloud.points[i].x()));
    put(out, static_cast<float>(cloud.points[i].y()));
    put(out, static_cast<float>(cloud.points[i].z()));
    put(out, static_cast<float>(cloud.reflectivity[i]));
    put(out, cloud.timestamps[i]);
    if (colored) {
      for (int c = 0; c < 3; ++c) {
        const double v = cloud.colored[i] ? cloud.colors[i][c] : 0.0;
        put(out, static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
    }
  }
  return out;
}

inline void write_ply(const std::filesystem::path& path, const ReflectivityCloud& cloud) {
  if (!cloud.consistent()) throw InvalidPoint("refusing to write an inconsistent cloud");
  write_file_atomic(path, serialize_ply(cloud));
}

}  // namespace hycal
