#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vsscrowd/pnm.hpp"
#include "vsscrowd/points.hpp"
#include "vsscrowd/tensor.hpp"

namespace vsscrowd {

struct Sample {
  Tensor image;  // (3,H,W) in [0,1]
  PointSet annotations;
  std::string id;
};

struct AugmentConfig {
  double scale_prob = 0.5;
  double scale_lo = 0.7, scale_hi = 1.3;
  double hflip_prob = 0.5;
  double color_jitter = 1.0;      // 0 disables; 1 = gains U[0.9,1.1], offsets U[-0.05,0.05]
  double noise_std = 0.01;        // additive Gaussian, 0 disables
  int64_t crop_size = 128;        // 0 disables cropping
  int64_t max_side = 0;           // 0 disables the aspect-preserving cap
};

// ---------------------------------------------------------------------------
// dataset IO
// ---------------------------------------------------------------------------

namespace detail {

inline std::string stem_of(const std::string& rel_path) {
  return std::filesystem::path(rel_path).stem().string();
}

inline std::string annotation_path_for(const std::string& image_path) {
  std::filesystem::path p(image_path);
  p.replace_extension(".txt");
  return p.string();
}

}  // namespace detail

/// Parses one `x y` pair per line; blank lines are skipped.
inline PointSet read_annotations(const std::string& path, const std::string& id) {
  std::ifstream in(path);
  if (!in) throw InputError("missing annotation file for '" + id + "': " + path);
  PointSet out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::istringstream ls(line);
    double x, y;
    std::string rest;
    if (!(ls >> x) || !(ls >> y) || (ls >> rest && !rest.empty()))
      throw InputError("malformed annotation line " + std::to_string(lineno) + " for '" + id +
                       "': expected `x y`");
    if (!std::isfinite(x) || !std::isfinite(y))
      throw InputError("non-finite annotation for '" + id + "' at line " + std::to_string(lineno));
    out.points.push_back({x, y});
  }
  return out;
}

inline void write_annotations(const std::string& path, const PointSet& pts) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write annotations: " + path);
  char buf[96];
  for (const Point& p : pts.points) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", p.x, p.y);
    out << buf;
  }
  if (!out) throw InputError("failed writing annotations: " + path);
}

/// Loads every sample named by the split manifest `<root>/<split>.txt`, whose
/// lines are image paths relative to root. Each image has a sibling `.txt`
/// annotation file with the same stem. Samples come back sorted by id.
inline std::vector<Sample> load_dataset(const std::string& root, const std::string& split) {
  namespace fs = std::filesystem;
  const std::string manifest = (fs::path(root) / (split + ".txt")).string();
  std::ifstream mf(manifest);
  if (!mf) throw InputError("missing split manifest: " + manifest);
  std::vector<Sample> samples;
  std::string line;
  while (std::getline(mf, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    Sample s;
    s.id = detail::stem_of(line);
    const std::string img_path = (fs::path(root) / line).string();
    s.image = read_pnm(img_path);
    s.annotations = read_annotations(detail::annotation_path_for(img_path), s.id);
    const double wmax = static_cast<double>(s.image.dim(2) - 1);
    const double hmax = static_cast<double>(s.image.dim(1) - 1);
    for (const Point& p : s.annotations.points)
      if (p.x < 0.0 || p.y < 0.0 || p.x > wmax || p.y > hmax)
        throw InputError("annotation out of bounds in record '" + s.id + "': (" +
                         std::to_string(p.x) + "," + std::to_string(p.y) + ") outside " +
                         std::to_string(s.image.dim(2)) + "x" + std::to_string(s.image.dim(1)));
    samples.push_back(std::move(s));
  }
  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  return samples;
}

/// Writes `<dir>/<id>.ppm` + `<dir>/<id>.txt`; returns the manifest line.
inline std::string write_sample(const std::string& dir, const Sample& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string img = (fs::path(dir) / (s.id + ".ppm")).string();
  write_ppm(img, s.image);
  write_annotations((fs::path(dir) / (s.id + ".txt")).string(), s.annotations);
  return (fs::path(dir).filename() / (s.id + ".ppm")).string();
}

// ---------------------------------------------------------------------------
// geometric helpers (plain image utilities, no gradients)
// ---------------------------------------------------------------------------

/// Bilinear resize with half-pixel centers to an arbitrary size.
inline Tensor resize_image(const Tensor& img, int64_t out_h, int64_t out_w) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (out_h < 1 || out_w < 1) throw ParameterError("resize_image: target must be positive");
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  const double* p = img.data();
  double* o = out.data();
  for (int64_t oy = 0; oy < out_h; ++oy) {
    const double src_y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    const int64_t y0 = static_cast<int64_t>(std::floor(src_y));
    const double ty = src_y - static_cast<double>(y0);
    const int64_t y0c = std::clamp<int64_t>(y0, 0, h - 1);
    const int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, h - 1);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      const double src_x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      const int64_t x0 = static_cast<int64_t>(std::floor(src_x));
      const double tx = src_x - static_cast<double>(x0);
      const int64_t x0c = std::clamp<int64_t>(x0, 0, w - 1);
      const int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, w - 1);
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* ip = p + ch * h * w;
        const double top = ip[y0c * w + x0c] * (1.0 - tx) + ip[y0c * w + x1c] * tx;
        const double bot = ip[y1c * w + x0c] * (1.0 - tx) + ip[y1c * w + x1c] * tx;
        o[(ch * out_h + oy) * out_w + ox] = top * (1.0 - ty) + bot * ty;
      }
    }
  }
  return out;
}

/// Resizes a sample to (out_h, out_w), moving annotations with the half-pixel
/// mapping and clamping them into the new bounds.
inline Sample resize_sample(const Sample& s, int64_t out_h, int64_t out_w) {
  Sample r;
  r.id = s.id;
  r.image = resize_image(s.image, out_h, out_w);
  const double ry = static_cast<double>(out_h) / static_cast<double>(s.image.dim(1));
  const double rx = static_cast<double>(out_w) / static_cast<double>(s.image.dim(2));
  r.annotations.points.reserve(s.annotations.points.size());
  for (const Point& p : s.annotations.points) {
    double x = (p.x + 0.5) * rx - 0.5;
    double y = (p.y + 0.5) * ry - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(out_w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(out_h - 1));
    r.annotations.points.push_back({x, y});
  }
  return r;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

/// Random training-time transform. Draw order is fixed (scale coin, scale
/// factor, flip coin, 3 channel gains, 3 channel offsets, per-pixel noise,
/// crop origin), so one seeded generator replays bit-identically.
inline Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  Sample cur = s;

  if (cfg.max_side > 0) {
    const int64_t side = std::max(cur.image.dim(1), cur.image.dim(2));
    if (side > cfg.max_side) {
      const double f = static_cast<double>(cfg.max_side) / static_cast<double>(side);
      const int64_t nh = std::max<int64_t>(1, static_cast<int64_t>(std::lround(cur.image.dim(1) * f)));
      const int64_t nw = std::max<int64_t>(1, static_cast<int64_t>(std::lround(cur.image.dim(2) * f)));
      cur = resize_sample(cur, nh, nw);
    }
  }

  const double scale_coin = rng.uniform();
  if (scale_coin < cfg.scale_prob) {
    const double f = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const int64_t nh = std::max<int64_t>(1, static_cast<int64_t>(std::lround(cur.image.dim(1) * f)));
    const int64_t nw = std::max<int64_t>(1, static_cast<int64_t>(std::lround(cur.image.dim(2) * f)));
    cur = resize_sample(cur, nh, nw);
  }

  const double flip_coin = rng.uniform();
  if (flip_coin < cfg.hflip_prob) {
    const int64_t c = cur.image.dim(0), h = cur.image.dim(1), w = cur.image.dim(2);
    Tensor flipped({c, h, w});
    const double* p = cur.image.data();
    double* o = flipped.data();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          o[(ch * h + y) * w + x] = p[(ch * h + y) * w + (w - 1 - x)];
    cur.image = flipped;
    for (Point& pt : cur.annotations.points) pt.x = static_cast<double>(w - 1) - pt.x;
  }

  if (cfg.color_jitter > 0.0) {
    const double a = cfg.color_jitter;
    double gain[3], offs[3];
    for (int c = 0; c < 3; ++c) gain[c] = rng.uniform(1.0 - 0.1 * a, 1.0 + 0.1 * a);
    for (int c = 0; c < 3; ++c) offs[c] = rng.uniform(-0.05 * a, 0.05 * a);
    double* p = cur.image.data();
    const int64_t plane = cur.image.dim(1) * cur.image.dim(2);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < plane; ++i) {
        double& v = p[c * plane + i];
        v = std::clamp(v * gain[c] + offs[c], 0.0, 1.0);
      }
  }

  if (cfg.noise_std > 0.0) {
    double* p = cur.image.data();
    const int64_t n = cur.image.numel();
    for (int64_t i = 0; i < n; ++i)
      p[i] = std::clamp(p[i] + rng.normal() * cfg.noise_std, 0.0, 1.0);
  }

  if (cfg.crop_size > 0) {
    const int64_t cs = cfg.crop_size;
    int64_t h = cur.image.dim(1), w = cur.image.dim(2);
    if (h < cs || w < cs) {  // pad bottom/right with zeros, then crop
      const int64_t ph = std::max(h, cs), pw = std::max(w, cs);
      Tensor padded({3, ph, pw});
      const double* p = cur.image.data();
      double* o = padded.data();
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
          std::copy(p + (c * h + y) * w, p + (c * h + y) * w + w, o + (c * ph + y) * pw);
      cur.image = padded;
      h = ph;
      w = pw;
    }
    const int64_t y0 = rng.uniform_int(0, h - cs);
    const int64_t x0 = rng.uniform_int(0, w - cs);
    Tensor cropped({3, cs, cs});
    const double* p = cur.image.data();
    double* o = cropped.data();
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < cs; ++y)
        std::copy(p + (c * h + y0 + y) * w + x0, p + (c * h + y0 + y) * w + x0 + cs,
                  o + (c * cs + y) * cs);
    cur.image = cropped;
    PointSet kept;
    for (const Point& pt : cur.annotations.points) {
      const double nx = pt.x - static_cast<double>(x0);
      const double ny = pt.y - static_cast<double>(y0);
      // Closed lower bound, open upper: border points on the origin side stay.
      if (nx >= 0.0 && ny >= 0.0 && nx < static_cast<double>(cs) && ny < static_cast<double>(cs))
        kept.points.push_back({nx, ny});
    }
    cur.annotations = kept;
  }

  return cur;
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

struct SynthConfig {
  int64_t count_lo = 5, count_hi = 20;
  int64_t height = 64, width = 64;
  double blob_sigma = 2.0;     // px
  double blob_amplitude = 0.8; // blended toward white over the background
  double background_noise = 0.1;
  double min_separation = 6.0; // px between blob centers
  int64_t max_attempts = 50;   // placement tries per point before giving up
};

/// Renders one scene: textured noise background with bright Gaussian blobs at
/// integer centers; annotations are the exact centers.
inline Sample synth_scene(const SynthConfig& cfg, const std::string& id, Rng& rng) {
  if (cfg.height % 16 != 0 || cfg.width % 16 != 0)
    throw InputError("synth: scene size must be divisible by 16");
  if (cfg.count_lo < 0 || cfg.count_hi < cfg.count_lo)
    throw ParameterError("synth: bad count range");
  const int64_t h = cfg.height, w = cfg.width;
  const int64_t plane = h * w;

  // Background: mid gray plus blurred noise for texture.
  std::vector<double> noise(static_cast<size_t>(plane));
  for (double& v : noise) v = rng.normal() * cfg.background_noise;
  std::vector<double> blurred(static_cast<size_t>(plane));
  for (int pass = 0; pass < 2; ++pass) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += noise[static_cast<size_t>(yy * w + xx)];
            ++cnt;
          }
        blurred[static_cast<size_t>(y * w + x)] = acc / static_cast<double>(cnt);
      }
    noise.swap(blurred);
  }

  // Blob placement with minimum-separation rejection; unplaceable points are
  // dropped and the recorded count shrinks accordingly.
  const int64_t want = rng.uniform_int(cfg.count_lo, cfg.count_hi);
  std::vector<Point> centers;
  const int64_t margin = 3;
  for (int64_t k = 0; k < want; ++k) {
    bool placed = false;
    for (int64_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const int64_t cx = rng.uniform_int(margin, w - 1 - margin);
      const int64_t cy = rng.uniform_int(margin, h - 1 - margin);
      bool clear = true;
      for (const Point& c : centers)
        if (std::hypot(c.x - static_cast<double>(cx), c.y - static_cast<double>(cy)) <
            cfg.min_separation) {
          clear = false;
          break;
        }
      if (clear) {
        centers.push_back({static_cast<double>(cx), static_cast<double>(cy)});
        placed = true;
      }
    }
  }

  // Blob mask: per-pixel max of the Gaussian bumps, blending toward white.
  std::vector<double> mask(static_cast<size_t>(plane), 0.0);
  const int64_t radius = static_cast<int64_t>(std::ceil(4.0 * cfg.blob_sigma));
  const double inv2s2 = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
  for (const Point& c : centers) {
    const int64_t cx = static_cast<int64_t>(c.x), cy = static_cast<int64_t>(c.y);
    for (int64_t dy = -radius; dy <= radius; ++dy)
      for (int64_t dx = -radius; dx <= radius; ++dx) {
        const int64_t y = cy + dy, x = cx + dx;
        if (y < 0 || y >= h || x < 0 || x >= w) continue;
        const double m =
            cfg.blob_amplitude * std::exp(-static_cast<double>(dx * dx + dy * dy) * inv2s2);
        double& slot = mask[static_cast<size_t>(y * w + x)];
        slot = std::max(slot, m);
      }
  }

  Sample s;
  s.id = id;
  s.image = Tensor({3, h, w});
  double* p = s.image.data();
  for (int64_t i = 0; i < plane; ++i) {
    const double bg = std::clamp(0.25 + noise[static_cast<size_t>(i)], 0.0, 1.0);
    const double v = bg + mask[static_cast<size_t>(i)] * (1.0 - bg);
    p[i] = v;
    p[plane + i] = v;
    p[2 * plane + i] = v;
  }
  s.annotations.points = centers;
  return s;
}

/// Generates `count` scenes with ids synth_0000...; per-scene streams derive
/// from (seed, id) so generation is order-independent and reproducible.
inline std::vector<Sample> synth_generate(const SynthConfig& cfg, int64_t count, uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04lld", static_cast<long long>(i));
    Rng rng(Rng::mix(seed, Rng::hash_string(name)));
    out.push_back(synth_scene(cfg, name, rng));
  }
  return out;
}

}  // namespace vsscrowd
