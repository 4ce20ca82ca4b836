#pragma once

#include <string>
#include <vector>

#include "vsscrowd/attention.hpp"
#include "vsscrowd/backbone.hpp"
#include "vsscrowd/layers.hpp"
#include "vsscrowd/scan.hpp"

namespace vsscrowd {

enum class FusionVariant { hs2fpn, hs2fpn_no_mhf, fpn_add, fgfp_like };

inline FusionVariant fusion_variant_from_string(const std::string& s) {
  if (s == "hs2fpn") return FusionVariant::hs2fpn;
  if (s == "hs2fpn_no_mhf") return FusionVariant::hs2fpn_no_mhf;
  if (s == "fpn_add") return FusionVariant::fpn_add;
  if (s == "fgfp_like") return FusionVariant::fgfp_like;
  throw ConfigError("unknown fusion variant: " + s);
}

inline std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::hs2fpn: return "hs2fpn";
    case FusionVariant::hs2fpn_no_mhf: return "hs2fpn_no_mhf";
    case FusionVariant::fpn_add: return "fpn_add";
    case FusionVariant::fgfp_like: return "fgfp_like";
  }
  throw ConfigError("unknown fusion variant value");
}

struct FusionConfig {
  FusionVariant variant = FusionVariant::hs2fpn;
  int64_t lateral_channels = 64;
  int64_t vss_depth = 1;  // refinement blocks per top-down step
};

/// Everything one top-down step could need, across all variants. All branches
/// are constructed so that switching the variant at runtime changes only the
/// dataflow, never the parameter set — ablations compare like with like.
struct FusionStep {
  MhfBlock mhf;
  LinearLayer lat_low, lat_high;  // 1x1 projections to lateral width
  std::vector<VssBlock> refine;
  Conv2dLayer smooth;             // 3x3 cleanup for the plain-add variant
  LinearLayer fg_fc1, fg_fc2;     // channel reweighting for the fgfp-like variant
  Conv2dLayer fg_spatial;         // spatial reweighting for the fgfp-like variant

  FusionStep() = default;
  FusionStep(int64_t c_high, int64_t c_low, const FusionConfig& fcfg, const MhfConfig& mcfg,
             int64_t state_dim, Rng& rng) {
    const int64_t lat = fcfg.lateral_channels;
    // The gate multiplies F_l (connection before) or the lateral-width sum
    // (connection post); pick the matching channel count when not broadcasting.
    const int64_t gate_target = mcfg.connection == Connection::before ? c_low : lat;
    MhfConfig step_cfg = mcfg;
    mhf = MhfBlock(c_high, gate_target, step_cfg, rng);
    lat_low = LinearLayer(c_low, lat, rng);
    lat_high = LinearLayer(c_high, lat, rng);
    for (int64_t i = 0; i < fcfg.vss_depth; ++i) refine.emplace_back(lat, state_dim, rng);
    smooth = Conv2dLayer(lat, lat, 3, 1, 1, rng);
    fg_fc1 = LinearLayer(lat, std::max<int64_t>(1, lat / mcfg.reduction), rng);
    fg_fc2 = LinearLayer(std::max<int64_t>(1, lat / mcfg.reduction), lat, rng);
    fg_spatial = Conv2dLayer(2, 1, 7, 1, 3, rng);
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    mhf.register_params(r, prefix + ".mhf");
    lat_low.register_params(r, prefix + ".lat_low");
    lat_high.register_params(r, prefix + ".lat_high");
    for (size_t i = 0; i < refine.size(); ++i)
      refine[i].register_params(r, prefix + ".refine" + std::to_string(i));
    smooth.register_params(r, prefix + ".smooth");
    fg_fc1.register_params(r, prefix + ".fg_fc1");
    fg_fc2.register_params(r, prefix + ".fg_fc2");
    fg_spatial.register_params(r, prefix + ".fg_spatial");
  }
};

/// Top-down neck: fuses the coarsest level into the middle one, then the
/// result into the finest, returning a lateral-width map at the finest size.
struct Fusion {
  FusionConfig cfg;
  MhfConfig mhf_cfg;
  FusionStep step32;  // level 3 -> level 2
  FusionStep step21;  // carrier -> level 1

  Fusion() = default;
  Fusion(int64_t base_channels, const FusionConfig& fcfg, const MhfConfig& mcfg,
         int64_t state_dim, Rng& rng)
      : cfg(fcfg), mhf_cfg(mcfg) {
    step32 = FusionStep(4 * base_channels, 2 * base_channels, fcfg, mcfg, state_dim, rng);
    step21 = FusionStep(fcfg.lateral_channels, base_channels, fcfg, mcfg, state_dim, rng);
  }

  Tensor run_step(const FusionStep& s, const Tensor& f_h, const Tensor& f_l) const {
    switch (cfg.variant) {
      case FusionVariant::hs2fpn:
      case FusionVariant::hs2fpn_no_mhf: {
        const bool gated = cfg.variant == FusionVariant::hs2fpn;
        Tensor low = f_l;
        if (gated && mhf_cfg.connection == Connection::before) low = s.mhf.enhance(f_l, f_h);
        Tensor lat_l = s.lat_low.forward(low);
        Tensor up_h = upsample_bilinear(s.lat_high.forward(f_h), 2);
        Tensor sum = add(lat_l, up_h);
        if (gated && mhf_cfg.connection == Connection::post) {
          const int64_t factor = MhfBlock::resolution_factor(f_l, f_h);
          Tensor g = s.mhf.gate(f_h, factor);
          sum = mhf_cfg.broadcast_gate ? mul_spatial(g, sum) : mul(g, sum);
        }
        for (const VssBlock& blk : s.refine) sum = blk.forward(sum);
        return sum;
      }
      case FusionVariant::fpn_add: {
        Tensor lat_l = s.lat_low.forward(f_l);
        Tensor up_h = upsample_bilinear(s.lat_high.forward(f_h), 2);
        return s.smooth.forward(add(lat_l, up_h));
      }
      case FusionVariant::fgfp_like: {
        Tensor lat_l = s.lat_low.forward(f_l);
        Tensor up_h = upsample_bilinear(s.lat_high.forward(f_h), 2);
        Tensor wc = sigmoid(s.fg_fc2.forward(relu(s.fg_fc1.forward(global_pool(up_h, PoolMode::avg)))));
        Tensor ws = sigmoid(s.fg_spatial.forward(channel_range_stats(up_h, 0, up_h.dim(0))));
        return add(mul_channel(wc, lat_l), mul_spatial(ws, up_h));
      }
    }
    throw ConfigError("fusion: unknown variant value");
  }

  Tensor forward(const FeaturePyramid& pyr) const {
    Tensor carrier = run_step(step32, pyr.f3, pyr.f2);
    return run_step(step21, carrier, pyr.f1);
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    step32.register_params(r, prefix + ".step32");
    step21.register_params(r, prefix + ".step21");
  }
};

}  // namespace vsscrowd
