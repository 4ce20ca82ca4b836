#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vsscrowd/ops.hpp"
#include "vsscrowd/points.hpp"

namespace vsscrowd {

/// Dense row-major cost matrix.
struct CostMatrix {
  int64_t rows = 0, cols = 0;
  std::vector<double> v;  // rows*cols

  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

struct MatchResult {
  std::vector<std::pair<int64_t, int64_t>> pairs;  // (row index, col index)
  std::vector<int64_t> unmatched_rows;
  double total_cost = 0.0;
};

namespace detail {

// Potentials-based shortest augmenting path assignment for n <= m; returns
// row_of_col (size m+1, 1-indexed, 0 = unassigned). O(n^2 m).
inline std::vector<int> assign_potentials(const std::vector<double>& a, int n, int m) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(m) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur =
            a[static_cast<size_t>((i0 - 1) * m + (j - 1))] - u[static_cast<size_t>(i0)] -
            v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  return p;
}

}  // namespace detail

/// Minimum-total-cost injective assignment of min(R,C) (row, col) pairs.
inline MatchResult hungarian_match(const CostMatrix& cost) {
  const int64_t r = cost.rows, c = cost.cols;
  if (r < 1 || c < 1) throw InputError("hungarian_match: empty cost matrix");
  if (static_cast<int64_t>(cost.v.size()) != r * c)
    throw DimensionError("hungarian_match: storage size disagrees with dims");
  for (double x : cost.v)
    if (std::isnan(x)) throw InputError("hungarian_match: NaN cost entry");

  // The solver wants rows <= cols; transpose when predictions outnumber
  // targets (the common case).
  const bool flip = r > c;
  const int n = static_cast<int>(flip ? c : r);
  const int m = static_cast<int>(flip ? r : c);
  std::vector<double> a(static_cast<size_t>(n) * static_cast<size_t>(m));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      a[static_cast<size_t>(i) * m + j] = flip ? cost.at(j, i) : cost.at(i, j);

  std::vector<int> row_of_col = detail::assign_potentials(a, n, m);

  MatchResult res;
  std::vector<char> row_used(static_cast<size_t>(r), 0);
  for (int j = 1; j <= m; ++j) {
    const int i = row_of_col[static_cast<size_t>(j)];
    if (i == 0) continue;
    const int64_t row = flip ? j - 1 : i - 1;
    const int64_t col = flip ? i - 1 : j - 1;
    res.pairs.emplace_back(row, col);
    res.total_cost += cost.at(row, col);
    row_used[static_cast<size_t>(row)] = 1;
  }
  std::sort(res.pairs.begin(), res.pairs.end());
  for (int64_t i = 0; i < r; ++i)
    if (!row_used[static_cast<size_t>(i)]) res.unmatched_rows.push_back(i);
  return res;
}

/// cost[j][i] = ||pred_j - gt_i||_2 - tau * conf_j. Rows are predictions.
inline CostMatrix build_cost(const PointSet& preds, const PointSet& gts, double tau = 0.0) {
  CostMatrix m;
  m.rows = static_cast<int64_t>(preds.size());
  m.cols = static_cast<int64_t>(gts.size());
  m.v.resize(static_cast<size_t>(m.rows * m.cols));
  for (int64_t j = 0; j < m.rows; ++j) {
    const Point& p = preds.points[static_cast<size_t>(j)];
    const double conf_term =
        tau != 0.0 && preds.has_confidences() ? tau * preds.confidences[static_cast<size_t>(j)] : 0.0;
    for (int64_t i = 0; i < m.cols; ++i) {
      const Point& g = gts.points[static_cast<size_t>(i)];
      m.at(j, i) = std::hypot(p.x - g.x, p.y - g.y) - conf_term;
    }
  }
  return m;
}

struct TtcWeights {
  double cls = 1.0;
  double loc = 0.5;
  double cnt = 0.1;
};

struct TtcBreakdown {
  double cls = 0.0;
  double loc = 0.0;
  double cnt = 0.0;
  double total = 0.0;
  int64_t matched = 0;
};

/// Three-part training loss over the full proposal grid: binary cross entropy
/// with matched proposals as positives, smooth-L1 between matched offsets and
/// the annotation displacements, and an absolute soft-count gap. Matching runs
/// on detached coordinates; gradients flow through logits and offsets only.
inline Tensor ttc_loss(const Tensor& logits, const Tensor& offsets,
                       const std::vector<Point>& grid, const PointSet& gts,
                       const TtcWeights& w, TtcBreakdown* breakdown = nullptr,
                       double tau = 0.0) {
  const int64_t p = static_cast<int64_t>(grid.size());
  if (logits.numel() != p || offsets.numel() != 2 * p)
    throw DimensionError("ttc_loss: proposal count mismatch with grid");
  const int64_t n = static_cast<int64_t>(gts.size());

  std::vector<double> targets(static_cast<size_t>(p), 0.0);
  std::vector<int64_t> matched_idx;
  std::vector<double> matched_off_targets;  // (2K) row-major: dx..., dy...

  if (n > 0) {
    PointSet proposals;
    proposals.points.reserve(static_cast<size_t>(p));
    proposals.confidences.reserve(static_cast<size_t>(p));
    const double* off = offsets.data();
    const double* lg = logits.data();
    for (int64_t j = 0; j < p; ++j) {
      proposals.points.push_back(
          {grid[static_cast<size_t>(j)].x + off[j], grid[static_cast<size_t>(j)].y + off[p + j]});
      proposals.confidences.push_back(detail::stable_sigmoid(lg[j]));
    }
    MatchResult match = hungarian_match(build_cost(proposals, gts, tau));
    matched_idx.reserve(match.pairs.size());
    std::vector<double> dxs, dys;
    for (const auto& [j, i] : match.pairs) {
      targets[static_cast<size_t>(j)] = 1.0;
      matched_idx.push_back(j);
      dxs.push_back(gts.points[static_cast<size_t>(i)].x - grid[static_cast<size_t>(j)].x);
      dys.push_back(gts.points[static_cast<size_t>(i)].y - grid[static_cast<size_t>(j)].y);
    }
    matched_off_targets = dxs;
    matched_off_targets.insert(matched_off_targets.end(), dys.begin(), dys.end());
  }

  // Per-annotation normalization: the cross entropy is summed over every
  // proposal and divided by the number of people, not by the grid size.
  // Dividing by the grid would shrink each person's supervision as the
  // input grows, making the loss weights resolution-dependent.
  Tensor cls = scale(bce_with_logits_mean(logits, targets),
                     static_cast<double>(p) / static_cast<double>(std::max<int64_t>(1, n)));
  Tensor total = scale(cls, w.cls);
  double loc_val = 0.0;
  if (!matched_idx.empty()) {
    Tensor matched = gather_cols(offsets, matched_idx);  // (2, K)
    Tensor loc = smooth_l1(matched, matched_off_targets, static_cast<double>(matched_idx.size()));
    loc_val = loc.item();
    total = add(total, scale(loc, w.loc));
  }
  double cnt_val = 0.0;
  if (n > 0) {
    Tensor cnt = abs_sub_const(sigmoid_sum(logits), static_cast<double>(n));
    cnt_val = cnt.item();
    total = add(total, scale(cnt, w.cnt));
  }
  if (breakdown) {
    breakdown->cls = cls.item();
    breakdown->loc = loc_val;
    breakdown->cnt = cnt_val;
    breakdown->total = total.item();
    breakdown->matched = static_cast<int64_t>(matched_idx.size());
  }
  return total;
}

}  // namespace vsscrowd
