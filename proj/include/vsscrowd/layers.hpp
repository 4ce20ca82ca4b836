#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vsscrowd/ops.hpp"
#include "vsscrowd/tensor.hpp"

namespace vsscrowd {

/// Ordered list of named parameters. Order is the serialization and optimizer
/// order, so registration must be deterministic.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }

  Tensor find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw ParameterError("parameter not found: " + name);
  }

  int64_t total_numel() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }

  void set_requires_grad(bool rg) {
    for (auto& [name, t] : items) t.set_requires_grad(rg);
  }

  void zero_grad() {
    for (auto& [name, t] : items) t.zero_grad();
  }
};

namespace init {

/// Uniform Xavier/Glorot: U[-a, a] with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out,
                             Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(-a, a);
  t.set_requires_grad(true);
  return t;
}

inline Tensor zeros_param(std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

inline Tensor full_param(std::vector<int64_t> shape, double v) {
  Tensor t = Tensor::full(std::move(shape), v);
  t.set_requires_grad(true);
  return t;
}

/// Inverse of softplus: returns x with log(1+exp(x)) == y.
inline double inv_softplus(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

}  // namespace init

struct Conv2dLayer {
  Tensor w, b;
  int64_t stride = 1, padding = 0;
  bool has_bias = true;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t padding_, Rng& rng,
              bool bias = true)
      : stride(stride_), padding(padding_), has_bias(bias) {
    w = init::xavier_uniform({cout, cin, k, k}, cin * k * k, cout * k * k, rng);
    if (has_bias) b = init::zeros_param({cout});
  }

  Tensor forward(const Tensor& x) const {
    return conv2d(x, w, has_bias ? &b : nullptr, stride, padding);
  }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".weight", w);
    if (has_bias) r.add(prefix + ".bias", b);
  }
};

/// Per-position linear map over the leading (channel) axis; the 1x1-conv
/// equivalent used for projections.
struct LinearLayer {
  Tensor w, b;
  bool has_bias = true;

  LinearLayer() = default;
  LinearLayer(int64_t cin, int64_t cout, Rng& rng, bool bias = true) : has_bias(bias) {
    w = init::xavier_uniform({cout, cin}, cin, cout, rng);
    if (has_bias) b = init::zeros_param({cout});
  }

  Tensor forward(const Tensor& x) const { return linear_cl(w, x, has_bias ? &b : nullptr); }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".weight", w);
    if (has_bias) r.add(prefix + ".bias", b);
  }
};

/// Affine layer norm across the channel axis of a (C,H,W) map.
struct ChannelNormLayer {
  Tensor gamma, beta;

  ChannelNormLayer() = default;
  explicit ChannelNormLayer(int64_t c) {
    gamma = init::full_param({c}, 1.0);
    beta = init::zeros_param({c});
  }

  Tensor forward(const Tensor& x) const { return channel_norm(x, gamma, beta); }

  void register_params(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".gamma", gamma);
    r.add(prefix + ".beta", beta);
  }
};

}  // namespace vsscrowd
