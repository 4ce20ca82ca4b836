#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vsscrowd/backbone.hpp"
#include "vsscrowd/config.hpp"
#include "vsscrowd/fusion.hpp"
#include "vsscrowd/head.hpp"
#include "vsscrowd/matching.hpp"

namespace vsscrowd {

/// The whole pipeline: backbone pyramid -> top-down fusion -> point head.
struct Model {
  ModelConfig cfg;
  Backbone backbone;
  Fusion fusion;
  PointHead head;

  Model() = default;
  explicit Model(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    Rng rng(Rng::mix(cfg.seed, 0x6d6f64656cULL));  // one stream for all init draws
    backbone = Backbone(cfg.base_channels, cfg.stage_depths, cfg.state_dim, rng);
    FusionConfig fc{cfg.fusion_variant, cfg.lateral_channels, cfg.vss_depth};
    fusion = Fusion(cfg.base_channels, fc, cfg.mhf, cfg.state_dim, rng);
    head = PointHead(cfg.lateral_channels, cfg.head_hidden, rng);
  }

  PointHead::Output forward(const Tensor& image) const {
    FeaturePyramid pyr = backbone.forward(image);
    Tensor fused = fusion.forward(pyr);
    return head.forward(fused, image.dim(1), image.dim(2));
  }

  /// Thresholded inference on one image (no gradients recorded).
  PointSet predict(const Tensor& image, double threshold) const {
    PointHead::Output out = forward(image);
    return decode_points(out.offsets, out.logits, out.grid, threshold, image.dim(1),
                         image.dim(2));
  }

  ParamRegistry params() const {
    ParamRegistry r;
    backbone.register_params(r, "backbone");
    fusion.register_params(r, "fusion");
    head.register_params(r, "head");
    return r;
  }
};

// ---------------------------------------------------------------------------
// checkpoint format: magic, then per parameter (name, dims, float64 payload),
// all little-endian, in registry order. Round-trips byte-identically.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[8] = {'V', 'S', 'C', 'K', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("truncated checkpoint: " + path);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamRegistry& reg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_pod<uint32_t>(out, static_cast<uint32_t>(reg.items.size()));
  for (const auto& [name, t] : reg.items) {
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(t.ndim()));
    for (int64_t d : t.shape()) detail::write_pod<int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw InputError("failed writing checkpoint: " + path);
}

/// Loads a checkpoint into an existing registry. The stored manifest must
/// match the model's registry name-for-name and shape-for-shape; the error
/// reports the first divergence.
inline void load_checkpoint(const std::string& path, ParamRegistry& reg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw InputError("not a checkpoint file: " + path);
  const uint32_t count = detail::read_pod<uint32_t>(in, path);
  if (count != reg.items.size())
    throw ConfigError("checkpoint manifest diff: file has " + std::to_string(count) +
                      " parameters, model has " + std::to_string(reg.items.size()));
  for (auto& [name, t] : reg.items) {
    const uint32_t nlen = detail::read_pod<uint32_t>(in, path);
    std::string fname(nlen, '\0');
    in.read(fname.data(), nlen);
    if (!in) throw InputError("truncated checkpoint: " + path);
    if (fname != name)
      throw ConfigError("checkpoint manifest diff: expected parameter '" + name + "', file has '" +
                        fname + "'");
    const uint32_t ndim = detail::read_pod<uint32_t>(in, path);
    std::vector<int64_t> dims(ndim);
    for (uint32_t i = 0; i < ndim; ++i) dims[i] = detail::read_pod<int64_t>(in, path);
    if (dims != t.shape())
      throw ConfigError("checkpoint manifest diff at '" + name + "': file shape " +
                        shape_to_string(dims) + ", model shape " + shape_to_string(t.shape()));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw InputError("truncated checkpoint: " + path);
  }
}

}  // namespace vsscrowd
