#pragma once

// Netpbm images: PGM (P2/P5) and PPM (P3/P6), maxval 255 or 65535. Samples map
// linearly between [0,1] and [0,maxval]; 16-bit binary samples are big-endian.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hybridcal/error.hpp"
#include "hybridcal/formats/io.hpp"
#include "hybridcal/image.hpp"

namespace hycal {

struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  int maxval = 255;
  std::vector<double> data;  // interleaved, [0,1]
};

inline PnmImage parse_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_ws_comments = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) -> std::uint64_t {
    skip_ws_comments();
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc() || ptr == bytes.data() + pos)
      throw ParseError(std::string("expected ") + what + " at byte offset " + std::to_string(pos));
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError("missing Netpbm magic at byte offset 0");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
    throw UnsupportedFormat(std::string("Netpbm variant P") + kind + " is not supported");
  pos = 2;
  PnmImage img;
  img.channels = (kind == '3' || kind == '6') ? 3 : 1;
  const bool binary = kind == '5' || kind == '6';
  const std::uint64_t w = read_uint("width");
  const std::uint64_t h = read_uint("height");
  const std::uint64_t maxval = read_uint("maxval");
  if (w == 0 || h == 0 || w > (1u << 20) || h > (1u << 20)) throw ParseError("implausible image size");
  if (maxval != 255 && maxval != 65535) throw UnsupportedMaxval("maxval " + std::to_string(maxval));
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.maxval = static_cast<int>(maxval);
  const std::uint64_t n = w * h * static_cast<std::uint64_t>(img.channels);

  if (binary) {
    if (pos >= bytes.size()) throw ParseError("missing pixel data at byte offset " + std::to_string(pos));
    ++pos;  // single whitespace after maxval
    const std::uint64_t bps = maxval > 255 ? 2 : 1;
    if ((bytes.size() - pos) / bps < n)
      throw ParseError("header claims " + std::to_string(n) + " samples but payload ends at byte offset " +
                       std::to_string(bytes.size()));
    img.data.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      unsigned v;
      if (bps == 1) {
        v = static_cast<unsigned char>(bytes[pos + i]);
      } else {
        v = (static_cast<unsigned>(static_cast<unsigned char>(bytes[pos + 2 * i])) << 8) |
            static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
      }
      if (v > maxval) throw ParseError("sample exceeds maxval at byte offset " + std::to_string(pos + i * bps));
      img.data[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
  } else {
    if (n > bytes.size()) throw ParseError("header claims more samples than the file can hold");
    img.data.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t v = read_uint("sample");
      if (v > maxval) throw ParseError("sample exceeds maxval at byte offset " + std::to_string(pos));
      img.data[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
  }
  return img;
}

inline GrayImage to_gray(const PnmImage& p) {
  GrayImage g(p.width, p.height);
  if (p.channels == 1) {
    g.data = p.data;
  } else {
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] = (p.data[3 * i] + p.data[3 * i + 1] + p.data[3 * i + 2]) / 3.0;
  }
  return g;
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  const PnmImage p = parse_pnm(read_file(path));
  if (p.channels != 1) throw UnsupportedFormat("'" + path.string() + "' is a color image; expected PGM");
  return to_gray(p);
}

inline ColorImage read_ppm(const std::filesystem::path& path) {
  const PnmImage p = parse_pnm(read_file(path));
  if (p.channels != 3) throw UnsupportedFormat("'" + path.string() + "' is grayscale; expected PPM");
  ColorImage c(p.width, p.height);
  c.data = p.data;
  return c;
}

namespace pnm_detail {

inline std::string serialize(int width, int height, int channels, const std::vector<double>& data, int maxval,
                             bool binary) {
  if (maxval != 255 && maxval != 65535) throw UnsupportedMaxval("maxval " + std::to_string(maxval));
  const char kind = channels == 1 ? (binary ? '5' : '2') : (binary ? '6' : '3');
  std::string out = std::string("P") + kind + "\n" + std::to_string(width) + " " + std::to_string(height) +
                    "\n" + std::to_string(maxval) + "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = std::clamp(data[i], 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(v * maxval));
    if (binary) {
      if (maxval > 255) out.push_back(static_cast<char>(q >> 8));
      out.push_back(static_cast<char>(q & 0xFF));
    } else {
      out += std::to_string(q);
      out.push_back((i + 1) % (static_cast<std::size_t>(width) * channels) == 0 ? '\n' : ' ');
    }
  }
  return out;
}

}  // namespace pnm_detail

inline std::string serialize_pgm(const GrayImage& img, int maxval = 255, bool binary = true) {
  return pnm_detail::serialize(img.width, img.height, 1, img.data, maxval, binary);
}

inline std::string serialize_ppm(const ColorImage& img, int maxval = 255, bool binary = true) {
  return pnm_detail::serialize(img.width, img.height, 3, img.data, maxval, binary);
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img, int maxval = 255,
                      bool binary = true) {
  write_file_atomic(path, serialize_pgm(img, maxval, binary));
}

inline void write_ppm(const std::filesystem::path& path, const ColorImage& img, int maxval = 255,
                      bool binary = true) {
  write_file_atomic(path, serialize_ppm(img, maxval, binary));
}

}  // namespace hycal
