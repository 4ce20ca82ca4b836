#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vsscrowd/matching.hpp"
#include "vsscrowd/points.hpp"

namespace vsscrowd {

/// Counting accuracy over a set of images. Two square-error summaries are
/// reported: `rmse` is the conventional root mean squared error, while
/// `mse_paper` keeps the 1/NUM factor outside the root — the two differ by a
/// factor of sqrt(NUM) and are both published conventions, so neither is
/// silently corrected into the other.
struct CountReport {
  std::vector<std::pair<double, double>> pairs;  // (annotated N_j, predicted M_j)
  double mae = 0.0;
  double mse_paper = 0.0;
  double rmse = 0.0;
};

inline CountReport count_metrics(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw ParameterError("count_metrics: need at least one image");
  CountReport r;
  r.pairs = pairs;
  const double num = static_cast<double>(pairs.size());
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& [n, m] : pairs) {
    const double d = n - m;
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  r.mae = abs_sum / num;
  r.mse_paper = std::sqrt(sq_sum) / num;
  r.rmse = std::sqrt(sq_sum / num);
  return r;
}

/// Which side of the match each rate is normalized by. `standard` divides
/// precision by the prediction count; `paper_text` preserves the reversed
/// printed assignment (precision over annotations).
enum class LocConvention { standard, paper_text };

inline LocConvention loc_convention_from_string(const std::string& s) {
  if (s == "standard") return LocConvention::standard;
  if (s == "paper_text") return LocConvention::paper_text;
  throw ConfigError("unknown localization convention: " + s);
}

inline std::string to_string(LocConvention c) {
  return c == LocConvention::standard ? "standard" : "paper_text";
}

struct LocReport {
  double sigma = 0.0;
  int64_t tp = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  LocConvention convention = LocConvention::standard;
};

/// Matches predictions to annotations by minimum total Euclidean distance; a
/// matched pair counts as a true positive iff half its distance is strictly
/// below sigma. Empty sets yield all-zero rates.
inline LocReport localization_metrics(const PointSet& preds, const PointSet& gts, double sigma,
                                      LocConvention convention = LocConvention::standard) {
  if (sigma <= 0.0) throw ParameterError("localization_metrics: sigma must be positive");
  LocReport r;
  r.sigma = sigma;
  r.convention = convention;
  const double m = static_cast<double>(preds.size());
  const double n = static_cast<double>(gts.size());
  if (preds.size() > 0 && gts.size() > 0) {
    MatchResult match = hungarian_match(build_cost(preds, gts, 0.0));
    for (const auto& [j, i] : match.pairs) {
      const Point& p = preds.points[static_cast<size_t>(j)];
      const Point& g = gts.points[static_cast<size_t>(i)];
      if (std::hypot(p.x - g.x, p.y - g.y) / 2.0 < sigma) ++r.tp;
    }
  }
  const double tp = static_cast<double>(r.tp);
  const double over_preds = m > 0.0 ? tp / m : 0.0;
  const double over_gts = n > 0.0 ? tp / n : 0.0;
  if (convention == LocConvention::standard) {
    r.precision = over_preds;
    r.recall = over_gts;
  } else {
    r.precision = over_gts;
    r.recall = over_preds;
  }
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

}  // namespace vsscrowd
