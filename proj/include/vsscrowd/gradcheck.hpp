#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "vsscrowd/ops.hpp"
#include "vsscrowd/tensor.hpp"

namespace vsscrowd {

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  int64_t coords_checked = 0;
  // Worst coordinate, for diagnostics.
  size_t worst_input = 0;
  int64_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool ok(double tol) const { return max_rel_error <= tol; }

  std::string to_string() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s: max_rel=%.3e over %lld coords (worst input %zu[%lld]: analytic=%.9g numeric=%.9g)",
                  op.c_str(), max_rel_error, static_cast<long long>(coords_checked), worst_input,
                  static_cast<long long>(worst_index), worst_analytic, worst_numeric);
    return std::string(buf);
  }
};

/// Central-difference gradient check. `fn` must map the current contents of
/// `inputs` to a scalar loss, deterministically. Every input is marked as
/// requiring grad; coordinates are subsampled deterministically when the
/// total exceeds `budget`.
inline GradCheckReport grad_check(const std::string& op_name,
                                  const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                                  double h = 1e-5, int64_t budget = 6000,
                                  uint64_t seed = 0x6772616463686bULL) {
  GradCheckReport report;
  report.op = op_name;

  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = fn();
    tape.backward(loss);
    for (Tensor& t : inputs) analytic.push_back(t.grad_values());
  }

  // Coordinate selection.
  int64_t total = 0;
  for (const Tensor& t : inputs) total += t.numel();
  std::vector<std::pair<size_t, int64_t>> coords;
  if (total <= budget) {
    for (size_t i = 0; i < inputs.size(); ++i)
      for (int64_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  } else {
    Rng rng(seed);
    // Guarantee coverage of every input, then fill the rest uniformly.
    for (size_t i = 0; i < inputs.size(); ++i)
      coords.emplace_back(i, rng.uniform_int(0, inputs[i].numel() - 1));
    while (static_cast<int64_t>(coords.size()) < budget) {
      int64_t flat = rng.uniform_int(0, total - 1);
      for (size_t i = 0; i < inputs.size(); ++i) {
        if (flat < inputs[i].numel()) {
          coords.emplace_back(i, flat);
          break;
        }
        flat -= inputs[i].numel();
      }
    }
  }

  for (const auto& [ti, j] : coords) {
    double* slot = inputs[ti].data() + j;
    const double saved = *slot;
    *slot = saved + h;
    const double fp = fn().item();
    *slot = saved - h;
    const double fm = fn().item();
    *slot = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[ti][static_cast<size_t>(j)];
    const double denom = std::max({1e-3, std::abs(a), std::abs(numeric)});
    const double rel = std::abs(a - numeric) / denom;
    ++report.coords_checked;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_input = ti;
      report.worst_index = j;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace vsscrowd
