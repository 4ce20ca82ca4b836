#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vsscrowd/model.hpp"
#include "vsscrowd/train.hpp"

namespace vsscrowd {

// ---------------------------------------------------------------------------
// prediction file: `count=M` header, then one `x y c` line per point
// ---------------------------------------------------------------------------

inline void write_prediction_file(const std::string& path, const PointSet& pts) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write predictions: " + path);
  out << "count=" << pts.size() << "\n";
  char buf[128];
  for (size_t i = 0; i < pts.size(); ++i) {
    const double c = pts.has_confidences() ? pts.confidences[i] : 1.0;
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", pts.points[i].x, pts.points[i].y, c);
    out << buf;
  }
  if (!out) throw InputError("failed writing predictions: " + path);
}

inline PointSet read_prediction_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open predictions: " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("count=", 0) != 0)
    throw InputError("bad prediction file header in " + path);
  const int64_t count = detail::parse_int("count", header.substr(6));
  PointSet out;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::istringstream ls(line);
    double x, y, c;
    if (!(ls >> x >> y >> c)) throw InputError("bad prediction line in " + path + ": " + line);
    out.points.push_back({x, y});
    out.confidences.push_back(c);
  }
  if (static_cast<int64_t>(out.size()) != count)
    throw InputError("prediction count mismatch in " + path + ": header says " +
                     std::to_string(count) + ", found " + std::to_string(out.size()));
  return out;
}

/// Marks each point with a small red cross on a copy of the image.
inline Tensor render_overlay(const Tensor& image, const PointSet& pts) {
  Tensor out(image.shape());
  std::copy(image.data(), image.data() + image.numel(), out.data());
  const int64_t h = image.dim(1), w = image.dim(2);
  const int64_t plane = h * w;
  double* p = out.data();
  auto paint = [&](int64_t y, int64_t x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    p[y * w + x] = 1.0;              // R
    p[plane + y * w + x] = 0.0;      // G
    p[2 * plane + y * w + x] = 0.0;  // B
  };
  for (const Point& pt : pts.points) {
    const int64_t cy = static_cast<int64_t>(std::lround(pt.y));
    const int64_t cx = static_cast<int64_t>(std::lround(pt.x));
    for (int64_t d = -2; d <= 2; ++d) {
      paint(cy + d, cx);
      paint(cy, cx + d);
    }
  }
  return out;
}

/// Zero-pads bottom/right to the next multiple of 16 (identity when aligned).
inline Tensor pad_to_multiple16(const Tensor& image) {
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t ph = (h + 15) / 16 * 16, pw = (w + 15) / 16 * 16;
  if (ph == h && pw == w) return image;
  Tensor out({c, ph, pw});
  const double* src = image.data();
  double* dst = out.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      std::copy(src + (ch * h + y) * w, src + (ch * h + y) * w + w, dst + (ch * ph + y) * pw);
  return out;
}

// ---------------------------------------------------------------------------
// structured evaluation report
// ---------------------------------------------------------------------------

inline std::string format_eval_report(const EvalResult& ev) {
  std::ostringstream out;
  char buf[160];
  auto kv = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key.c_str(), v);
    out << buf;
  };
  out << "images=" << ev.count.pairs.size() << "\n";
  kv("count.mae", ev.count.mae);
  kv("count.mse_paper", ev.count.mse_paper);
  kv("count.rmse", ev.count.rmse);
  auto loc_block = [&](const LocReport& r) {
    char sig[40];
    std::snprintf(sig, sizeof(sig), "%g", r.sigma);
    const std::string base = "loc.sigma" + std::string(sig) + "." + to_string(r.convention);
    out << base << ".tp=" << r.tp << "\n";
    kv(base + ".precision", r.precision);
    kv(base + ".recall", r.recall);
    kv(base + ".f1", r.f1);
  };
  for (size_t i = 0; i < ev.loc_standard.size(); ++i) {
    loc_block(ev.loc_standard[i]);
    loc_block(ev.loc_paper_text[i]);
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

struct TrainOutcome {
  TrainResult result;
  std::string checkpoint_path;
};

inline TrainOutcome cmd_train(const ModelConfig& cfg, const std::string& data_root,
                              const std::string& out_dir, const std::string& split = "train") {
  namespace fs = std::filesystem;
  std::vector<Sample> samples = load_dataset(data_root, split);
  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  save_config((fs::path(out_dir) / "config.txt").string(), cfg);

  Model model(cfg);
  std::ofstream log((fs::path(out_dir) / "train_log.txt").string());
  if (!log) throw InputError("cannot write training log in " + out_dir);

  TrainOutcome outcome;
  outcome.checkpoint_path = ckpt;
  outcome.result = train_model(model, samples, &log, ckpt);  // reverts+saves on numeric abort
  save_checkpoint(ckpt, model.params());
  char line[160];
  std::snprintf(line, sizeof(line), "done steps=%lld early_stopped=%d last_loss=%.9g\n",
                static_cast<long long>(outcome.result.steps_run),
                outcome.result.early_stopped ? 1 : 0, outcome.result.last_loss);
  log << line;
  return outcome;
}

inline EvalResult cmd_evaluate(const ModelConfig& cfg, const std::string& checkpoint_path,
                               const std::string& data_root, const std::string& split,
                               const std::vector<double>& sigmas, double threshold,
                               const std::string& out_path) {
  Model model(cfg);
  ParamRegistry reg = model.params();
  load_checkpoint(checkpoint_path, reg);
  std::vector<Sample> samples = load_dataset(data_root, split);
  EvalResult ev = evaluate_model(model, samples, sigmas, threshold);
  const std::string report = format_eval_report(ev);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw InputError("cannot write report: " + out_path);
    out << report;
  }
  std::cout << report;
  return ev;
}

inline PointSet cmd_predict(const ModelConfig& cfg, const std::string& checkpoint_path,
                            const std::string& image_path, const std::string& out_prefix,
                            double threshold) {
  Model model(cfg);
  ParamRegistry reg = model.params();
  load_checkpoint(checkpoint_path, reg);
  Tensor image = read_pnm(image_path);
  const int64_t orig_h = image.dim(1), orig_w = image.dim(2);
  Tensor padded = pad_to_multiple16(image);
  PointHead::Output out = model.forward(padded);
  // Decode against the original frame so padding never emits phantom people.
  PointSet pts = decode_points(out.offsets, out.logits, out.grid, threshold, orig_h, orig_w);
  write_prediction_file(out_prefix + ".txt", pts);
  write_ppm(out_prefix + "_overlay.ppm", render_overlay(image, pts));
  return pts;
}

inline std::vector<std::string> cmd_synth_gen(const std::string& out_root,
                                              const std::string& split, int64_t count,
                                              const SynthConfig& scfg, uint64_t seed) {
  namespace fs = std::filesystem;
  std::vector<Sample> samples = synth_generate(scfg, count, seed);
  const std::string dir = (fs::path(out_root) / split).string();
  std::vector<std::string> manifest_lines;
  for (const Sample& s : samples) manifest_lines.push_back(write_sample(dir, s));
  fs::create_directories(out_root);
  std::ofstream mf((fs::path(out_root) / (split + ".txt")).string());
  if (!mf) throw InputError("cannot write manifest in " + out_root);
  for (const std::string& line : manifest_lines) mf << line << "\n";
  return manifest_lines;
}

struct BenchRow {
  int64_t size = 0;
  int64_t pixels = 0;
  uint64_t flops = 0;
  double wall_ms = 0.0;
  double ratio = 0.0;  // flops vs previous row; 0 on the first row
};

/// Runs the backbone once per size on a deterministic random image and
/// reports the instrumented scan-arithmetic count. Single-threaded.
inline std::vector<BenchRow> cmd_bench_scaling(const std::vector<int64_t>& sizes,
                                               const ModelConfig& cfg) {
  for (int64_t s : sizes)
    if (s < 16 || s % 16 != 0)
      throw InputError("bench sizes must be positive multiples of 16, got " + std::to_string(s));
  Rng init_rng(Rng::mix(cfg.seed, 0x62656e6368ULL));
  Backbone bb(cfg.base_channels, cfg.stage_depths, cfg.state_dim, init_rng);
  std::vector<BenchRow> rows;
  for (int64_t s : sizes) {
    Rng img_rng(Rng::mix(cfg.seed, static_cast<uint64_t>(s)));
    Tensor img({3, s, s});
    double* p = img.data();
    for (int64_t i = 0; i < img.numel(); ++i) p[i] = img_rng.uniform();
    reset_scan_flops();
    const auto t0 = std::chrono::steady_clock::now();
    (void)bb.forward(img);
    const auto t1 = std::chrono::steady_clock::now();
    BenchRow row;
    row.size = s;
    row.pixels = s * s;
    row.flops = scan_flops();
    row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    row.ratio = rows.empty() ? 0.0
                             : static_cast<double>(row.flops) /
                                   static_cast<double>(rows.back().flops);
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "size      pixels        scan_flops      wall_ms     ratio\n";
  char buf[160];
  for (const BenchRow& r : rows) {
    if (r.ratio > 0.0)
      std::snprintf(buf, sizeof(buf), "%-8lld %-12lld %-15llu %-11.2f %.3f\n",
                    static_cast<long long>(r.size), static_cast<long long>(r.pixels),
                    static_cast<unsigned long long>(r.flops), r.wall_ms, r.ratio);
    else
      std::snprintf(buf, sizeof(buf), "%-8lld %-12lld %-15llu %-11.2f -\n",
                    static_cast<long long>(r.size), static_cast<long long>(r.pixels),
                    static_cast<unsigned long long>(r.flops), r.wall_ms);
    out << buf;
  }
  return out.str();
}

/// Maps the error taxonomy onto process exit codes.
inline int run_guarded(const std::function<void()>& fn) {
  try {
    fn();
    return exit_code::ok;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return exit_code::input;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return exit_code::numeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vsscrowd
