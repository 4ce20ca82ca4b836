#pragma once

#include <algorithm>
#include <vector>

#include "vsscrowd/layers.hpp"
#include "vsscrowd/ops.hpp"
#include "vsscrowd/points.hpp"

namespace vsscrowd {

/// Dense prediction head over the reference grid. The fused map arrives at
/// 1/4 resolution; one internal 2x upsample brings it to the grid's stride-2
/// resolution, then two small conv branches emit per-proposal offsets and
/// confidence logits.
struct PointHead {
  static constexpr int64_t kGridStride = 2;
  // Confidence bias starts at the logit of a 1% positive prior so the dense
  // grid begins nearly silent instead of half-on everywhere.
  static constexpr double kClsPriorBias = -4.59511985013459;

  Conv2dLayer reg1, reg2;  // offsets branch; final layer starts at zero
  Conv2dLayer cls1, cls2;  // confidence branch

  PointHead() = default;
  PointHead(int64_t cin, int64_t hidden, Rng& rng) {
    reg1 = Conv2dLayer(cin, hidden, 3, 1, 1, rng);
    reg2 = Conv2dLayer(hidden, 2, 3, 1, 1, rng);
    std::fill(reg2.w.data(), reg2.w.data() + reg2.w.numel(), 0.0);
    cls1 = Conv2dLayer(cin, hidden, 3, 1, 1, rng);
    cls2 = Conv2dLayer(hidden, 1, 3, 1, 1, rng);
    cls2.b.data()[0] = kClsPriorBias;
  }

  struct Output {
    Tensor offsets;  // (2, P): row 0 dx, row 1 dy, proposals in grid order
    Tensor logits;   // (1, P)
    std::vector<Point> grid;
  };

  Output forward(const Tensor& fused, int64_t img_h, int64_t img_w) const {
    Tensor up = upsample_bilinear(fused, 2);
    const int64_t gh = up.dim(1), gw = up.dim(2);
    const int64_t want_h = (img_h + kGridStride - 1) / kGridStride;
    const int64_t want_w = (img_w + kGridStride - 1) / kGridStride;
    if (gh != want_h || gw != want_w)
      throw ConfigError("head: feature grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                        " does not cover a " + std::to_string(img_h) + "x" + std::to_string(img_w) +
                        " image at stride " + std::to_string(kGridStride));
    Tensor off = reg2.forward(relu(reg1.forward(up)));   // (2, gh, gw)
    Tensor lg = cls2.forward(relu(cls1.forward(up)));    // (1, gh, gw)
    Output out;
    out.offsets = reshape(off, {2, gh * gw});
    out.logits = reshape(lg, {1, gh * gw});
    out.grid = make_reference_grid(img_h, img_w, kGridStride);
    return out;
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    reg1.register_params(r, prefix + ".reg1");
    reg2.register_params(r, prefix + ".reg2");
    cls1.register_params(r, prefix + ".cls1");
    cls2.register_params(r, prefix + ".cls2");
  }
};

}  // namespace vsscrowd
