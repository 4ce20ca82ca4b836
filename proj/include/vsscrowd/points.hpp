#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vsscrowd/common.hpp"
#include "vsscrowd/ops.hpp"

namespace vsscrowd {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// A set of 2D locations in pixel coordinates; predictions also carry one
/// confidence per point, annotations carry none.
struct PointSet {
  std::vector<Point> points;
  std::vector<double> confidences;  // empty for annotations

  size_t size() const { return points.size(); }
  bool has_confidences() const { return !confidences.empty(); }
};

/// Cell-center reference points of an H x W image at the given stride, in
/// row-major cell order: (s*j + s/2 - 0.5, s*i + s/2 - 0.5).
inline std::vector<Point> make_reference_grid(int64_t h, int64_t w, int64_t stride = 2) {
  if (stride < 1) throw ParameterError("make_reference_grid: stride must be >= 1");
  const int64_t rows = (h + stride - 1) / stride;
  const int64_t cols = (w + stride - 1) / stride;
  std::vector<Point> grid;
  grid.reserve(static_cast<size_t>(rows * cols));
  const double half = static_cast<double>(stride) / 2.0 - 0.5;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      grid.push_back({static_cast<double>(stride * j) + half, static_cast<double>(stride * i) + half});
  return grid;
}

/// Thresholded decoding: keeps proposals with sigmoid(logit) >= threshold,
/// adds offsets to the reference points and clamps into image bounds.
inline PointSet decode_points(const Tensor& offsets, const Tensor& logits,
                              const std::vector<Point>& grid, double threshold, int64_t img_h,
                              int64_t img_w) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ParameterError("decode_points: threshold must lie strictly in (0,1)");
  const int64_t p = static_cast<int64_t>(grid.size());
  if (offsets.numel() != 2 * p || logits.numel() != p)
    throw DimensionError("decode_points: proposal count mismatch with grid");
  const double* off = offsets.data();
  const double* lg = logits.data();
  PointSet out;
  for (int64_t j = 0; j < p; ++j) {
    const double conf = detail::stable_sigmoid(lg[j]);
    if (conf < threshold) continue;
    double x = grid[static_cast<size_t>(j)].x + off[j];
    double y = grid[static_cast<size_t>(j)].y + off[p + j];
    x = std::clamp(x, 0.0, static_cast<double>(img_w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img_h - 1));
    out.points.push_back({x, y});
    out.confidences.push_back(conf);
  }
  return out;
}

}  // namespace vsscrowd
