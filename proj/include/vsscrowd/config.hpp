#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vsscrowd/attention.hpp"
#include "vsscrowd/data.hpp"
#include "vsscrowd/fusion.hpp"
#include "vsscrowd/matching.hpp"

namespace vsscrowd {

/// Every knob of the pipeline in one flat record. Text form is line-oriented
/// `key = value`; unknown keys are rejected so ablation typos fail loudly
/// instead of silently running the default.
struct ModelConfig {
  // architecture
  int64_t base_channels = 32;
  std::array<int64_t, 3> stage_depths = {2, 2, 2};
  int64_t state_dim = 8;
  int64_t lateral_channels = 64;
  int64_t vss_depth = 1;
  FusionVariant fusion_variant = FusionVariant::hs2fpn;
  MhfConfig mhf;
  int64_t head_hidden = 32;
  double head_threshold = 0.5;

  // loss
  TtcWeights ttc;
  double ttc_tau = 0.0;

  // optimizer / schedule
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t batch_size = 1;
  int64_t steps = 3000;
  int64_t eval_every = 50;
  bool early_stop = true;
  double target_mae = 1.0;
  double target_f1 = 0.90;
  double early_stop_sigma = 8.0;

  // data
  uint64_t seed = 0;
  bool augment_enabled = false;
  AugmentConfig aug;

  void validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    for (int64_t d : stage_depths)
      if (d < 0) throw ConfigError("stage_depths entries must be >= 0");
    if (state_dim < 1) throw ConfigError("state_dim must be >= 1");
    if (lateral_channels < 1) throw ConfigError("lateral_channels must be >= 1");
    if (vss_depth < 0) throw ConfigError("vss_depth must be >= 0");
    if (head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
    if (head_threshold <= 0.0 || head_threshold >= 1.0)
      throw ConfigError("head_threshold must lie strictly in (0,1)");
    if (ttc.cls < 0.0 || ttc.loc < 0.0 || ttc.cnt < 0.0)
      throw ConfigError("ttc weights must be non-negative");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    mhf.validate();
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
  }
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean value for " + key + ": '" + v + "' (use true/false)");
}

}  // namespace detail

inline std::string serialize_config(const ModelConfig& c) {
  std::ostringstream out;
  out << "base_channels = " << c.base_channels << "\n";
  out << "stage_depths = " << c.stage_depths[0] << "," << c.stage_depths[1] << ","
      << c.stage_depths[2] << "\n";
  out << "state_dim = " << c.state_dim << "\n";
  out << "lateral_channels = " << c.lateral_channels << "\n";
  out << "vss_depth = " << c.vss_depth << "\n";
  out << "fusion_variant = " << to_string(c.fusion_variant) << "\n";
  out << "mhf_num_heads = " << c.mhf.num_heads << "\n";
  out << "mhf_reduction = " << c.mhf.reduction << "\n";
  out << "mhf_spatial_kernel = " << c.mhf.spatial_kernel << "\n";
  out << "mhf_connection = " << (c.mhf.connection == Connection::before ? "before" : "post")
      << "\n";
  out << "mhf_sigmoid_bound = " << (c.mhf.sigmoid_bound ? "true" : "false") << "\n";
  out << "mhf_broadcast_gate = " << (c.mhf.broadcast_gate ? "true" : "false") << "\n";
  out << "head_hidden = " << c.head_hidden << "\n";
  out << "head_threshold = " << detail::fmt_double(c.head_threshold) << "\n";
  out << "ttc_cls = " << detail::fmt_double(c.ttc.cls) << "\n";
  out << "ttc_loc = " << detail::fmt_double(c.ttc.loc) << "\n";
  out << "ttc_cnt = " << detail::fmt_double(c.ttc.cnt) << "\n";
  out << "ttc_tau = " << detail::fmt_double(c.ttc_tau) << "\n";
  out << "lr = " << detail::fmt_double(c.lr) << "\n";
  out << "adam_beta1 = " << detail::fmt_double(c.adam_beta1) << "\n";
  out << "adam_beta2 = " << detail::fmt_double(c.adam_beta2) << "\n";
  out << "adam_eps = " << detail::fmt_double(c.adam_eps) << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "steps = " << c.steps << "\n";
  out << "eval_every = " << c.eval_every << "\n";
  out << "early_stop = " << (c.early_stop ? "true" : "false") << "\n";
  out << "target_mae = " << detail::fmt_double(c.target_mae) << "\n";
  out << "target_f1 = " << detail::fmt_double(c.target_f1) << "\n";
  out << "early_stop_sigma = " << detail::fmt_double(c.early_stop_sigma) << "\n";
  out << "seed = " << c.seed << "\n";
  out << "augment = " << (c.augment_enabled ? "true" : "false") << "\n";
  out << "aug_scale_prob = " << detail::fmt_double(c.aug.scale_prob) << "\n";
  out << "aug_scale_lo = " << detail::fmt_double(c.aug.scale_lo) << "\n";
  out << "aug_scale_hi = " << detail::fmt_double(c.aug.scale_hi) << "\n";
  out << "aug_hflip_prob = " << detail::fmt_double(c.aug.hflip_prob) << "\n";
  out << "aug_color_jitter = " << detail::fmt_double(c.aug.color_jitter) << "\n";
  out << "aug_noise_std = " << detail::fmt_double(c.aug.noise_std) << "\n";
  out << "aug_crop_size = " << c.aug.crop_size << "\n";
  out << "aug_max_side = " << c.aug.max_side << "\n";
  return out.str();
}

/// Parses `key = value` lines ('#' comments and blank lines allowed). Keys
/// not listed in serialize_config are configuration errors.
inline ModelConfig parse_config(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");

    if (key == "base_channels") c.base_channels = detail::parse_int(key, val);
    else if (key == "stage_depths") {
      std::istringstream vs(val);
      std::string part;
      std::vector<int64_t> depths;
      while (std::getline(vs, part, ',')) depths.push_back(detail::parse_int(key, detail::trim(part)));
      if (depths.size() != 3) throw ConfigError("stage_depths needs exactly 3 entries");
      c.stage_depths = {depths[0], depths[1], depths[2]};
    }
    else if (key == "state_dim") c.state_dim = detail::parse_int(key, val);
    else if (key == "lateral_channels") c.lateral_channels = detail::parse_int(key, val);
    else if (key == "vss_depth") c.vss_depth = detail::parse_int(key, val);
    else if (key == "fusion_variant") c.fusion_variant = fusion_variant_from_string(val);
    else if (key == "mhf_num_heads") c.mhf.num_heads = detail::parse_int(key, val);
    else if (key == "mhf_reduction") c.mhf.reduction = detail::parse_int(key, val);
    else if (key == "mhf_spatial_kernel") c.mhf.spatial_kernel = detail::parse_int(key, val);
    else if (key == "mhf_connection") {
      if (val == "before") c.mhf.connection = Connection::before;
      else if (val == "post") c.mhf.connection = Connection::post;
      else throw ConfigError("mhf_connection must be before|post, got '" + val + "'");
    }
    else if (key == "mhf_sigmoid_bound") c.mhf.sigmoid_bound = detail::parse_bool(key, val);
    else if (key == "mhf_broadcast_gate") c.mhf.broadcast_gate = detail::parse_bool(key, val);
    else if (key == "head_hidden") c.head_hidden = detail::parse_int(key, val);
    else if (key == "head_threshold") c.head_threshold = detail::parse_double(key, val);
    else if (key == "ttc_cls") c.ttc.cls = detail::parse_double(key, val);
    else if (key == "ttc_loc") c.ttc.loc = detail::parse_double(key, val);
    else if (key == "ttc_cnt") c.ttc.cnt = detail::parse_double(key, val);
    else if (key == "ttc_tau") c.ttc_tau = detail::parse_double(key, val);
    else if (key == "lr") c.lr = detail::parse_double(key, val);
    else if (key == "adam_beta1") c.adam_beta1 = detail::parse_double(key, val);
    else if (key == "adam_beta2") c.adam_beta2 = detail::parse_double(key, val);
    else if (key == "adam_eps") c.adam_eps = detail::parse_double(key, val);
    else if (key == "batch_size") c.batch_size = detail::parse_int(key, val);
    else if (key == "steps") c.steps = detail::parse_int(key, val);
    else if (key == "eval_every") c.eval_every = detail::parse_int(key, val);
    else if (key == "early_stop") c.early_stop = detail::parse_bool(key, val);
    else if (key == "target_mae") c.target_mae = detail::parse_double(key, val);
    else if (key == "target_f1") c.target_f1 = detail::parse_double(key, val);
    else if (key == "early_stop_sigma") c.early_stop_sigma = detail::parse_double(key, val);
    else if (key == "seed") c.seed = static_cast<uint64_t>(detail::parse_int(key, val));
    else if (key == "augment") c.augment_enabled = detail::parse_bool(key, val);
    else if (key == "aug_scale_prob") c.aug.scale_prob = detail::parse_double(key, val);
    else if (key == "aug_scale_lo") c.aug.scale_lo = detail::parse_double(key, val);
    else if (key == "aug_scale_hi") c.aug.scale_hi = detail::parse_double(key, val);
    else if (key == "aug_hflip_prob") c.aug.hflip_prob = detail::parse_double(key, val);
    else if (key == "aug_color_jitter") c.aug.color_jitter = detail::parse_double(key, val);
    else if (key == "aug_noise_std") c.aug.noise_std = detail::parse_double(key, val);
    else if (key == "aug_crop_size") c.aug.crop_size = detail::parse_int(key, val);
    else if (key == "aug_max_side") c.aug.max_side = detail::parse_int(key, val);
    else throw ConfigError("unknown config key: '" + key + "'");
  }
  c.validate();
  return c;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

inline void save_config(const std::string& path, const ModelConfig& c) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write config: " + path);
  out << serialize_config(c);
}

}  // namespace vsscrowd
