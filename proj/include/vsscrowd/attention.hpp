#pragma once

#include <string>
#include <vector>

#include "vsscrowd/layers.hpp"
#include "vsscrowd/ops.hpp"

namespace vsscrowd {

/// Where the low-level gate is applied relative to the pyramid fusion sum.
enum class Connection { before, post };

struct MhfConfig {
  int64_t num_heads = 4;       // channel groups in the spatial-attention stage
  int64_t reduction = 4;       // bottleneck ratio of the shared pooled stacks
  int64_t spatial_kernel = 7;  // per-group map kernel; must be odd
  Connection connection = Connection::before;
  bool sigmoid_bound = true;   // bound the final gate into (0,1)
  bool broadcast_gate = true;  // single-channel gate broadcast over low-level channels

  void validate() const {
    if (num_heads < 1) throw ConfigError("mhf: num_heads must be >= 1");
    if (reduction < 1) throw ConfigError("mhf: reduction must be >= 1");
    if (spatial_kernel < 1 || spatial_kernel % 2 == 0)
      throw ConfigError("mhf: spatial_kernel must be odd and positive");
  }
};

/// Channel enhancement: reweights channels by a sigmoid of a shared bottleneck
/// applied to both global max and global average pools.
struct Cem {
  LinearLayer fc1, fc2;  // shared stack: C -> C/r -> C (1x1 convs on pooled vectors)

  Cem() = default;
  Cem(int64_t c, int64_t reduction, Rng& rng) {
    if (c % reduction != 0)
      throw ConfigError("cem: channels " + std::to_string(c) + " not divisible by reduction " +
                        std::to_string(reduction));
    fc1 = LinearLayer(c, c / reduction, rng);
    fc2 = LinearLayer(c / reduction, c, rng);
  }

  Tensor shared_stack(const Tensor& pooled) const {
    return fc2.forward(relu(fc1.forward(pooled)));
  }

  /// Returns the (C,1,1) channel weights.
  Tensor weights(const Tensor& f_h) const {
    Tensor mx = global_pool(f_h, PoolMode::max);
    Tensor av = global_pool(f_h, PoolMode::avg);
    return sigmoid(add(shared_stack(mx), shared_stack(av)));
  }

  /// Returns F_out1 = W (.) F_h.
  Tensor forward(const Tensor& f_h) const { return mul_channel(weights(f_h), f_h); }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    fc1.register_params(r, prefix + ".fc1");
    fc2.register_params(r, prefix + ".fc2");
  }
};

/// Multi-head spatial enhancement: contiguous channel groups, each reduced to
/// (max, mean) maps and mixed by that head's own small conv; heads concatenate
/// to a (num_heads, H, W) map.
struct Msem {
  int64_t num_heads = 4;
  std::vector<Conv2dLayer> head_convs;  // each 2 -> 1, k x k, same padding

  Msem() = default;
  Msem(int64_t heads, int64_t kernel, Rng& rng) : num_heads(heads) {
    for (int64_t i = 0; i < heads; ++i)
      head_convs.emplace_back(2, 1, kernel, 1, (kernel - 1) / 2, rng);
  }

  Tensor forward(const Tensor& f_out1) const {
    const int64_t c = f_out1.dim(0);
    if (c % num_heads != 0)
      throw ConfigError("msem: channels " + std::to_string(c) + " not divisible by num_heads " +
                        std::to_string(num_heads));
    const int64_t span = c / num_heads;
    std::vector<Tensor> maps;
    maps.reserve(static_cast<size_t>(num_heads));
    for (int64_t g = 0; g < num_heads; ++g) {
      Tensor stats = channel_range_stats(f_out1, g * span, (g + 1) * span);  // (2,H,W)
      maps.push_back(head_convs[static_cast<size_t>(g)].forward(stats));     // (1,H,W)
    }
    return concat0(maps);  // (num_heads, H, W)
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    for (size_t i = 0; i < head_convs.size(); ++i)
      head_convs[i].register_params(r, prefix + ".head" + std::to_string(i));
  }
};

/// Head-channel enhancement and upsampling: reweights the head maps by pooled
/// statistics (shared bottleneck, like Cem), fuses heads into the gate map,
/// optionally bounds it with a sigmoid, and upsamples to the low-level size.
struct Hcem {
  LinearLayer fc1, fc2;   // shared stack: h -> max(1, h/r) -> h
  LinearLayer fuse;       // h -> gate channels (1 when broadcasting)
  bool sigmoid_bound = true;

  Hcem() = default;
  Hcem(int64_t heads, int64_t reduction, int64_t gate_channels, bool bound, Rng& rng)
      : sigmoid_bound(bound) {
    const int64_t mid = std::max<int64_t>(1, heads / reduction);
    fc1 = LinearLayer(heads, mid, rng);
    fc2 = LinearLayer(mid, heads, rng);
    fuse = LinearLayer(heads, gate_channels, rng);
  }

  Tensor shared_stack(const Tensor& pooled) const {
    return fc2.forward(relu(fc1.forward(pooled)));
  }

  Tensor forward(const Tensor& f_out2, int64_t factor) const {
    Tensor mx = global_pool(f_out2, PoolMode::max);
    Tensor av = global_pool(f_out2, PoolMode::avg);
    Tensor wc = sigmoid(add(shared_stack(mx), shared_stack(av)));  // (h,1,1)
    Tensor enhanced = mul_channel(wc, f_out2);
    Tensor fused = fuse.forward(enhanced);  // (gate_channels, H, W)
    Tensor bounded = sigmoid_bound ? sigmoid(fused) : fused;
    return upsample_bilinear(bounded, factor);
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    fc1.register_params(r, prefix + ".fc1");
    fc2.register_params(r, prefix + ".fc2");
    fuse.register_params(r, prefix + ".fuse");
  }
};

/// The full high-level attention block: gate = hcem(msem(cem(F_h))), applied
/// multiplicatively onto the low-level map.
struct MhfBlock {
  MhfConfig cfg;
  Cem cem;
  Msem msem;
  Hcem hcem;

  MhfBlock() = default;
  MhfBlock(int64_t c_high, int64_t c_low, const MhfConfig& cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    if (c_high % cfg.num_heads != 0)
      throw ConfigError("mhf: high-level channels " + std::to_string(c_high) +
                        " not divisible by num_heads " + std::to_string(cfg.num_heads));
    cem = Cem(c_high, cfg.reduction, rng);
    msem = Msem(cfg.num_heads, cfg.spatial_kernel, rng);
    hcem = Hcem(cfg.num_heads, cfg.reduction, cfg.broadcast_gate ? 1 : c_low, cfg.sigmoid_bound,
                rng);
  }

  static int64_t resolution_factor(const Tensor& f_l, const Tensor& f_h) {
    const int64_t hl = f_l.dim(1), wl = f_l.dim(2);
    const int64_t hh = f_h.dim(1), wh = f_h.dim(2);
    if (hh < 1 || wh < 1 || hl % hh != 0 || wl % wh != 0 || hl / hh != wl / wh)
      throw DimensionError("mhf_enhance: low-level size " + std::to_string(hl) + "x" +
                           std::to_string(wl) + " is not an integer multiple of high-level " +
                           std::to_string(hh) + "x" + std::to_string(wh));
    return hl / hh;
  }

  /// The upsampled gate map at the low-level resolution.
  Tensor gate(const Tensor& f_h, int64_t factor) const {
    return hcem.forward(msem.forward(cem.forward(f_h)), factor);
  }

  /// F_out4 = F_l (.) gate(F_h).
  Tensor enhance(const Tensor& f_l, const Tensor& f_h) const {
    const int64_t factor = resolution_factor(f_l, f_h);
    Tensor g = gate(f_h, factor);
    if (cfg.broadcast_gate) return mul_spatial(g, f_l);
    return mul(g, f_l);
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    cem.register_params(r, prefix + ".cem");
    msem.register_params(r, prefix + ".msem");
    hcem.register_params(r, prefix + ".hcem");
  }
};

}  // namespace vsscrowd
