#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vsscrowd/common.hpp"
#include "vsscrowd/tensor.hpp"

namespace vsscrowd {

namespace detail {

// Reads the next whitespace-separated PNM header token, skipping '#' comments.
inline std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw InputError("truncated image header: " + path);
  return tok;
}

inline int64_t pnm_int(std::istream& in, const std::string& path) {
  const std::string tok = pnm_token(in, path);
  try {
    size_t pos = 0;
    const long long v = std::stoll(tok, &pos);
    if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw InputError("bad header field '" + tok + "' in " + path);
  }
}

}  // namespace detail

/// Reads a binary PPM (P6) or PGM (P5) file into a (3,H,W) tensor in [0,1];
/// grayscale input is replicated across the three channels.
inline Tensor read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image: " + path);
  const std::string magic = detail::pnm_token(in, path);
  if (magic != "P6" && magic != "P5")
    throw InputError("unsupported image format '" + magic + "' in " + path +
                     " (binary P6/P5 expected)");
  const int64_t w = detail::pnm_int(in, path);
  const int64_t h = detail::pnm_int(in, path);
  const int64_t maxval = detail::pnm_int(in, path);
  if (w < 1 || h < 1) throw InputError("degenerate image size in " + path);
  if (maxval != 255) throw InputError("unsupported maxval " + std::to_string(maxval) + " in " + path);
  const int64_t comps = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(w * h * comps));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw InputError("truncated pixel data in " + path);
  Tensor img({3, h, w});
  double* p = img.data();
  const int64_t plane = h * w;
  for (int64_t i = 0; i < plane; ++i) {
    if (comps == 3) {
      for (int64_t c = 0; c < 3; ++c)
        p[c * plane + i] = static_cast<double>(raw[static_cast<size_t>(i * 3 + c)]) / 255.0;
    } else {
      const double v = static_cast<double>(raw[static_cast<size_t>(i)]) / 255.0;
      p[i] = v;
      p[plane + i] = v;
      p[2 * plane + i] = v;
    }
  }
  return img;
}

/// Writes a (3,H,W) tensor in [0,1] as binary PPM (P6), rounding to 8 bits.
inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw DimensionError("write_ppm: expects a (3,H,W) tensor, got " + shape_to_string(img.shape()));
  const int64_t h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write image: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  const double* p = img.data();
  const int64_t plane = h * w;
  std::vector<unsigned char> raw(static_cast<size_t>(plane * 3));
  for (int64_t i = 0; i < plane; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      const double v = std::clamp(p[c * plane + i], 0.0, 1.0);
      raw[static_cast<size_t>(i * 3 + c)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw InputError("failed writing image: " + path);
}

}  // namespace vsscrowd
