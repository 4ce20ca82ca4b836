#pragma once

#include <array>
#include <string>
#include <vector>

#include "vsscrowd/layers.hpp"
#include "vsscrowd/scan.hpp"

namespace vsscrowd {

/// Three-scale feature stack: channels double and spatial extent halves
/// between consecutive levels (C @ /4, 2C @ /8, 4C @ /16).
struct FeaturePyramid {
  Tensor f1, f2, f3;
};

/// Patch embedding plus three stages of scan blocks with 2x downsampling
/// between stages.
struct Backbone {
  int64_t base_channels = 32;
  Conv2dLayer patch_embed;  // 3 -> C, 4x4 stride 4
  std::vector<VssBlock> stage1, stage2, stage3;
  Conv2dLayer down1;  // C -> 2C, 2x2 stride 2
  Conv2dLayer down2;  // 2C -> 4C, 2x2 stride 2

  Backbone() = default;
  Backbone(int64_t c, const std::array<int64_t, 3>& depths, int64_t state_dim, Rng& rng)
      : base_channels(c) {
    patch_embed = Conv2dLayer(3, c, 4, 4, 0, rng);
    for (int64_t i = 0; i < depths[0]; ++i) stage1.emplace_back(c, state_dim, rng);
    down1 = Conv2dLayer(c, 2 * c, 2, 2, 0, rng);
    for (int64_t i = 0; i < depths[1]; ++i) stage2.emplace_back(2 * c, state_dim, rng);
    down2 = Conv2dLayer(2 * c, 4 * c, 2, 2, 0, rng);
    for (int64_t i = 0; i < depths[2]; ++i) stage3.emplace_back(4 * c, state_dim, rng);
  }

  FeaturePyramid forward(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != 3)
      throw InputError("backbone: expects a (3,H,W) image, got " + shape_to_string(image.shape()));
    const int64_t h = image.dim(1), w = image.dim(2);
    if (h % 16 != 0 || w % 16 != 0)
      throw InputError("backbone: image size " + std::to_string(h) + "x" + std::to_string(w) +
                       " not divisible by 16; pad the image to a multiple of 16 first");
    Tensor x = patch_embed.forward(image);
    for (const VssBlock& blk : stage1) x = blk.forward(x);
    FeaturePyramid pyr;
    pyr.f1 = x;
    x = down1.forward(x);
    for (const VssBlock& blk : stage2) x = blk.forward(x);
    pyr.f2 = x;
    x = down2.forward(x);
    for (const VssBlock& blk : stage3) x = blk.forward(x);
    pyr.f3 = x;
    return pyr;
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    patch_embed.register_params(r, prefix + ".patch_embed");
    for (size_t i = 0; i < stage1.size(); ++i)
      stage1[i].register_params(r, prefix + ".stage1." + std::to_string(i));
    down1.register_params(r, prefix + ".down1");
    for (size_t i = 0; i < stage2.size(); ++i)
      stage2[i].register_params(r, prefix + ".stage2." + std::to_string(i));
    down2.register_params(r, prefix + ".down2");
    for (size_t i = 0; i < stage3.size(); ++i)
      stage3[i].register_params(r, prefix + ".stage3." + std::to_string(i));
  }
};

}  // namespace vsscrowd
