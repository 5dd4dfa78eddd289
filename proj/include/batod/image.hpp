#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "batod/errors.hpp"

namespace batod {

/// Float image in HWC layout. Pixel values of dataset images live in [0, 1];
/// the same container also carries signed perturbations, whose range checks
/// happen at the operations that produce them.
struct Image {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h_, int w_, int c_, float fill = 0.0f)
      : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  float& at(int y, int x, int ch) { return data[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
  float at(int y, int x, int ch) const {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

  bool in_unit_range(float slack = 0.0f) const {
    for (float v : data)
      if (!(v >= -slack && v <= 1.0f + slack)) return false;
    return true;
  }

  float max_abs() const {
    float m = 0.0f;
    for (float v : data) m = std::max(m, std::fabs(v));
    return m;
  }
};

inline Image zeros_like(const Image& im) { return Image(im.h, im.w, im.c, 0.0f); }

inline void clamp01(Image& im) {
  for (float& v : im.data) v = std::clamp(v, 0.0f, 1.0f);
}

inline float l2_distance(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return static_cast<float>(std::sqrt(s));
}

namespace detail {

inline int pnm_next_token(std::istream& in, std::string& tok) {
  tok.clear();
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {  // comment runs to end of line
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  return tok.empty() ? EOF : 0;
}

}  // namespace detail

/// Reads a binary PGM (P5, 1 channel) or PPM (P6, 3 channels) file. Both 8-bit
/// and 16-bit sample depths decode; values normalize to [0, 1] as value/maxval.
inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_file, "cannot open image " + path.string());

  std::string magic;
  if (detail::pnm_next_token(in, magic) == EOF || (magic != "P5" && magic != "P6"))
    fail(ErrorCode::undecodable_image, "not a binary PGM/PPM file: " + path.string());
  const int channels = (magic == "P6") ? 3 : 1;

  std::string tok;
  long dims[3];
  for (long& d : dims) {
    if (detail::pnm_next_token(in, tok) == EOF) {
      fail(ErrorCode::undecodable_image, "truncated header in " + path.string());
    }
    try {
      d = std::stol(tok);
    } catch (const std::exception&) {
      fail(ErrorCode::undecodable_image, "bad header field '" + tok + "' in " + path.string());
    }
  }
  const long width = dims[0], height = dims[1], maxval = dims[2];
  if (width <= 0 || height <= 0 || (maxval != 255 && maxval != 65535))
    fail(ErrorCode::undecodable_image, "unsupported PNM geometry in " + path.string());

  Image im(static_cast<int>(height), static_cast<int>(width), channels);
  const std::size_t n = im.size();
  const float scale = 1.0f / static_cast<float>(maxval);
  if (maxval == 255) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      fail(ErrorCode::undecodable_image, "truncated pixel data in " + path.string());
    for (std::size_t i = 0; i < n; ++i) im.data[i] = buf[i] * scale;
  } else {
    std::vector<unsigned char> buf(n * 2);  // big-endian 16-bit samples
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
    if (static_cast<std::size_t>(in.gcount()) != n * 2)
      fail(ErrorCode::undecodable_image, "truncated pixel data in " + path.string());
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
      im.data[i] = v * scale;
    }
  }
  return im;
}

/// Writes a binary PGM/PPM. 16-bit depth keeps perturbed pixels within
/// 1/131070 of their float value, so trigger structure survives persistence.
inline void write_pnm(const std::filesystem::path& path, const Image& im, int bit_depth = 8) {
  if (im.c != 1 && im.c != 3)
    fail(ErrorCode::shape_mismatch, "PNM supports 1 or 3 channels, got " + std::to_string(im.c));
  if (bit_depth != 8 && bit_depth != 16)
    fail(ErrorCode::precondition, "bit depth must be 8 or 16");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write image " + path.string());

  const int maxval = (bit_depth == 8) ? 255 : 65535;
  out << (im.c == 3 ? "P6" : "P5") << "\n" << im.w << " " << im.h << "\n" << maxval << "\n";

  const std::size_t n = im.size();
  if (bit_depth == 8) {
    std::vector<unsigned char> buf(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float v = std::clamp(im.data[i], 0.0f, 1.0f);
      buf[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n));
  } else {
    std::vector<unsigned char> buf(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
      const float v = std::clamp(im.data[i], 0.0f, 1.0f);
      const unsigned q = static_cast<unsigned>(std::lround(v * 65535.0f));
      buf[2 * i] = static_cast<unsigned char>(q >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * 2));
  }
  if (!out) fail(ErrorCode::io_error, "short write on " + path.string());
}

}  // namespace batod
