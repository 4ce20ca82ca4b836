#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "vsscrowd/data.hpp"
#include "vsscrowd/metrics.hpp"
#include "vsscrowd/model.hpp"

namespace vsscrowd {

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct Adam {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  Adam() = default;
  Adam(const ParamRegistry& reg, double lr_, double b1, double b2, double eps_)
      : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {
    m.reserve(reg.items.size());
    v.reserve(reg.items.size());
    for (const auto& [name, p] : reg.items) {
      m.emplace_back(static_cast<size_t>(p.numel()), 0.0);
      v.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
  }

  void step(ParamRegistry& reg) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < reg.items.size(); ++i) {
      Tensor& p = reg.items[i].second;
      if (!p.has_grad()) continue;
      double* pd = p.data();
      const double* g = p.grad();
      double* mi = m[i].data();
      double* vi = v[i].data();
      const int64_t n = p.numel();
      for (int64_t j = 0; j < n; ++j) {
        mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
        vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
        const double mhat = mi[j] / bc1;
        const double vhat = vi[j] / bc2;
        pd[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// parameter snapshots (for the non-finite-loss revert contract)
// ---------------------------------------------------------------------------

inline std::vector<std::vector<double>> snapshot_params(const ParamRegistry& reg) {
  std::vector<std::vector<double>> snap;
  snap.reserve(reg.items.size());
  for (const auto& [name, p] : reg.items) snap.push_back(p.values());
  return snap;
}

inline void restore_params(ParamRegistry& reg, const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < reg.items.size(); ++i) reg.items[i].second.values() = snap[i];
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

inline int64_t worker_count(int64_t jobs) {
  int64_t n = static_cast<int64_t>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("VSSCROWD_THREADS")) {
    int64_t cap = 0;
    try {
      size_t pos = 0;
      cap = std::stoll(env, &pos);
      if (pos != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad VSSCROWD_THREADS value: '") + env + "'");
    }
    if (cap < 1) throw ConfigError(std::string("bad VSSCROWD_THREADS value: '") + env + "'");
    if (cap < n) n = cap;
  }
  return std::min(n, std::max<int64_t>(1, jobs));
}

struct EvalResult {
  CountReport count;
  // One report per sigma, in both normalization conventions.
  std::vector<LocReport> loc_standard;
  std::vector<LocReport> loc_paper_text;
};

/// Runs inference over all samples (parallel across images, results merged in
/// index order so the outcome is independent of thread interleaving).
inline EvalResult evaluate_model(const Model& model, const std::vector<Sample>& samples,
                                 const std::vector<double>& sigmas, double threshold) {
  if (samples.empty()) throw ParameterError("evaluate: empty sample set");
  const int64_t n = static_cast<int64_t>(samples.size());
  std::vector<PointSet> preds(static_cast<size_t>(n));
  const int64_t workers = worker_count(n);
  std::vector<std::string> failures(static_cast<size_t>(workers));
  auto run = [&](int64_t wi) {
    try {
      for (int64_t i = wi; i < n; i += workers)
        preds[static_cast<size_t>(i)] =
            model.predict(samples[static_cast<size_t>(i)].image, threshold);
    } catch (const std::exception& e) {
      failures[static_cast<size_t>(wi)] = e.what();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int64_t wi = 0; wi < workers; ++wi) pool.emplace_back(run, wi);
    for (std::thread& th : pool) th.join();
  }
  for (const std::string& f : failures)
    if (!f.empty()) throw NumericError("evaluation worker failed: " + f);

  EvalResult res;
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    pairs.emplace_back(static_cast<double>(samples[static_cast<size_t>(i)].annotations.size()),
                       static_cast<double>(preds[static_cast<size_t>(i)].size()));
  res.count = count_metrics(pairs);

  for (double sigma : sigmas) {
    // Pool matches across images by aggregating per-image TP/M/N.
    int64_t tp = 0, m_total = 0, n_total = 0;
    for (int64_t i = 0; i < n; ++i) {
      const PointSet& p = preds[static_cast<size_t>(i)];
      const PointSet& g = samples[static_cast<size_t>(i)].annotations;
      m_total += static_cast<int64_t>(p.size());
      n_total += static_cast<int64_t>(g.size());
      if (p.size() > 0 && g.size() > 0)
        tp += localization_metrics(p, g, sigma, LocConvention::standard).tp;
    }
    auto finish = [&](LocConvention conv) {
      LocReport r;
      r.sigma = sigma;
      r.convention = conv;
      r.tp = tp;
      const double over_m = m_total > 0 ? static_cast<double>(tp) / static_cast<double>(m_total) : 0.0;
      const double over_n = n_total > 0 ? static_cast<double>(tp) / static_cast<double>(n_total) : 0.0;
      r.precision = conv == LocConvention::standard ? over_m : over_n;
      r.recall = conv == LocConvention::standard ? over_n : over_m;
      r.f1 = r.precision + r.recall > 0.0
                 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                 : 0.0;
      return r;
    };
    res.loc_standard.push_back(finish(LocConvention::standard));
    res.loc_paper_text.push_back(finish(LocConvention::paper_text));
  }
  return res;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  int64_t steps_run = 0;
  bool early_stopped = false;
  double last_loss = 0.0;
  double final_mae = -1.0;  // -1 = never evaluated
  double final_f1 = -1.0;
};

/// Deterministic single-threaded loop: cycles the sample list in order,
/// averages the loss over the batch, steps Adam, and optionally early-stops
/// once the train-set count MAE and localization F1 reach their targets.
/// A non-finite loss (or a numeric fault inside the forward pass) reverts the
/// parameters to the last good step, writes them to `abort_checkpoint_path`
/// when non-empty, and raises a numeric error.
inline TrainResult train_model(Model& model, const std::vector<Sample>& train_set,
                               std::ostream* log, const std::string& abort_checkpoint_path) {
  if (train_set.empty()) throw ParameterError("train: empty sample set");
  const ModelConfig& cfg = model.cfg;
  ParamRegistry reg = model.params();
  reg.set_requires_grad(true);
  Adam opt(reg, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  TrainResult result;

  const int64_t n = static_cast<int64_t>(train_set.size());
  int64_t cursor = 0;  // position in the cycling order; epoch = cursor / n

  std::vector<std::vector<double>> last_good = snapshot_params(reg);
  auto abort_numeric = [&](const std::string& why) {
    restore_params(reg, last_good);
    if (!abort_checkpoint_path.empty()) save_checkpoint(abort_checkpoint_path, reg);
    throw NumericError("training aborted: " + why + " (parameters reverted to last good step)");
  };

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    last_good = snapshot_params(reg);
    reg.zero_grad();
    Tape tape;
    TtcBreakdown mean_bd;
    double batch_loss = 0.0;
    try {
      Tape::Scope scope(tape);
      Tensor total;
      for (int64_t bi = 0; bi < cfg.batch_size; ++bi) {
        const int64_t idx = cursor % n;
        const int64_t epoch = cursor / n;
        ++cursor;
        Sample s = train_set[static_cast<size_t>(idx)];
        if (cfg.augment_enabled) {
          Rng arng(Rng::mix(Rng::mix(cfg.seed, Rng::hash_string(s.id)),
                            static_cast<uint64_t>(epoch)));
          s = augment(s, cfg.aug, arng);
        }
        PointHead::Output out = model.forward(s.image);
        TtcBreakdown bd;
        Tensor loss = ttc_loss(out.logits, out.offsets, out.grid, s.annotations, cfg.ttc, &bd,
                               cfg.ttc_tau);
        mean_bd.cls += bd.cls;
        mean_bd.loc += bd.loc;
        mean_bd.cnt += bd.cnt;
        mean_bd.total += bd.total;
        mean_bd.matched += bd.matched;
        total = bi == 0 ? loss : add(total, loss);
      }
      if (cfg.batch_size > 1) total = scale(total, 1.0 / static_cast<double>(cfg.batch_size));
      batch_loss = total.item();
      if (!std::isfinite(batch_loss)) abort_numeric("non-finite loss at step " + std::to_string(step));
      tape.backward(total);
    } catch (const NumericError& e) {
      abort_numeric(std::string(e.what()) + " at step " + std::to_string(step));
    }
    opt.step(reg);
    result.steps_run = step;
    result.last_loss = batch_loss;

    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    if (log) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "step=%lld total=%.9g cls=%.9g loc=%.9g cnt=%.9g matched=%lld\n",
                    static_cast<long long>(step), batch_loss, mean_bd.cls * inv_b,
                    mean_bd.loc * inv_b, mean_bd.cnt * inv_b,
                    static_cast<long long>(mean_bd.matched));
      (*log) << line << std::flush;
    }

    if (cfg.early_stop && step % cfg.eval_every == 0) {
      EvalResult ev = evaluate_model(model, train_set, {cfg.early_stop_sigma}, cfg.head_threshold);
      result.final_mae = ev.count.mae;
      result.final_f1 = ev.loc_standard[0].f1;
      if (log) {
        char line[192];
        std::snprintf(line, sizeof(line), "eval step=%lld mae=%.9g f1=%.9g\n",
                      static_cast<long long>(step), ev.count.mae, ev.loc_standard[0].f1);
        (*log) << line << std::flush;
      }
      if (ev.count.mae <= cfg.target_mae && ev.loc_standard[0].f1 >= cfg.target_f1) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace vsscrowd
