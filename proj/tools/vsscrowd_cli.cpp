// Command-line front end: train / evaluate / predict / synth-gen /
// bench-scaling over the crowd-localization pipeline.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vsscrowd/vsscrowd.hpp"

namespace {

vsscrowd::ModelConfig load_config_with_seed(const std::string& path, int64_t seed_override) {
  vsscrowd::ModelConfig cfg = vsscrowd::load_config(path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowd localization from individual point annotations"};
  app.require_subcommand(1);

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "fit a model on a dataset split");
  std::string tr_config, tr_data, tr_out, tr_split = "train";
  int64_t tr_seed = -1;
  train->add_option("--config", tr_config, "config file")->required();
  train->add_option("--data", tr_data, "dataset root")->required();
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_option("--split", tr_split, "dataset split (default train)");
  train->add_option("--seed", tr_seed, "override the config seed");

  // evaluate ---------------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "report count and localization metrics");
  std::string ev_config, ev_ckpt, ev_data, ev_out, ev_split = "test";
  std::vector<double> ev_sigmas;
  double ev_threshold = -1.0;
  int64_t ev_seed = -1;
  eval->add_option("--config", ev_config, "config file")->required();
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--data", ev_data, "dataset root")->required();
  eval->add_option("--split", ev_split, "dataset split (default test)");
  eval->add_option("--sigma", ev_sigmas, "localization radii (default 4 8)");
  eval->add_option("--threshold", ev_threshold, "decode threshold (default from config)");
  eval->add_option("--out", ev_out, "report file (also printed)");
  eval->add_option("--seed", ev_seed, "override the config seed");

  // predict ----------------------------------------------------------------
  auto* pred = app.add_subcommand("predict", "locate people in one image");
  std::string pr_config, pr_ckpt, pr_image, pr_out;
  double pr_threshold = -1.0;
  int64_t pr_seed = -1;
  pred->add_option("--config", pr_config, "config file")->required();
  pred->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  pred->add_option("--image", pr_image, "input image (binary PPM/PGM)")->required();
  pred->add_option("--out", pr_out, "output prefix (writes .txt and _overlay.ppm)")->required();
  pred->add_option("--threshold", pr_threshold, "decode threshold (default from config)");
  pred->add_option("--seed", pr_seed, "override the config seed");

  // synth-gen ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic dataset split");
  std::string sg_out, sg_split = "train";
  int64_t sg_count = 5, sg_size = 64, sg_lo = 5, sg_hi = 15, sg_seed = 0;
  synth->add_option("--out", sg_out, "dataset root to create")->required();
  synth->add_option("--split", sg_split, "split name (default train)");
  synth->add_option("--count", sg_count, "number of scenes (default 5)");
  synth->add_option("--size", sg_size, "scene side in pixels, multiple of 16 (default 64)");
  synth->add_option("--count-lo", sg_lo, "min people per scene (default 5)");
  synth->add_option("--count-hi", sg_hi, "max people per scene (default 15)");
  synth->add_option("--seed", sg_seed, "generator seed (default 0)");

  // bench-scaling ------------------------------------------------------------
  auto* bench = app.add_subcommand("bench-scaling", "scan-cost scaling across input sizes");
  std::string bn_config;
  std::vector<int64_t> bn_sizes;
  int64_t bn_seed = -1;
  bench->add_option("--sizes", bn_sizes, "input sides, multiples of 16 (default 64 128 256)");
  bench->add_option("--config", bn_config, "config file (default: built-in defaults)");
  bench->add_option("--seed", bn_seed, "override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? vsscrowd::exit_code::ok : vsscrowd::exit_code::config;
  }

  using vsscrowd::run_guarded;

  if (*train) {
    return run_guarded([&] {
      vsscrowd::ModelConfig cfg = load_config_with_seed(tr_config, tr_seed);
      vsscrowd::TrainOutcome out = vsscrowd::cmd_train(cfg, tr_data, tr_out, tr_split);
      std::cout << "steps=" << out.result.steps_run
                << " early_stopped=" << (out.result.early_stopped ? 1 : 0)
                << " checkpoint=" << out.checkpoint_path << "\n";
    });
  }
  if (*eval) {
    return run_guarded([&] {
      vsscrowd::ModelConfig cfg = load_config_with_seed(ev_config, ev_seed);
      if (ev_sigmas.empty()) ev_sigmas = {4.0, 8.0};
      const double thr = ev_threshold > 0.0 ? ev_threshold : cfg.head_threshold;
      vsscrowd::cmd_evaluate(cfg, ev_ckpt, ev_data, ev_split, ev_sigmas, thr, ev_out);
    });
  }
  if (*pred) {
    return run_guarded([&] {
      vsscrowd::ModelConfig cfg = load_config_with_seed(pr_config, pr_seed);
      const double thr = pr_threshold > 0.0 ? pr_threshold : cfg.head_threshold;
      vsscrowd::PointSet pts = vsscrowd::cmd_predict(cfg, pr_ckpt, pr_image, pr_out, thr);
      std::cout << "count=" << pts.size() << " out=" << pr_out << ".txt\n";
    });
  }
  if (*synth) {
    return run_guarded([&] {
      vsscrowd::SynthConfig scfg;
      scfg.count_lo = sg_lo;
      scfg.count_hi = sg_hi;
      scfg.height = sg_size;
      scfg.width = sg_size;
      auto lines = vsscrowd::cmd_synth_gen(sg_out, sg_split, sg_count, scfg,
                                           static_cast<uint64_t>(sg_seed));
      std::cout << "wrote " << lines.size() << " scenes under " << sg_out << "/" << sg_split
                << "\n";
    });
  }
  if (*bench) {
    return run_guarded([&] {
      vsscrowd::ModelConfig cfg =
          bn_config.empty() ? vsscrowd::ModelConfig{} : vsscrowd::load_config(bn_config);
      if (bn_seed >= 0) cfg.seed = static_cast<uint64_t>(bn_seed);
      if (bn_sizes.empty()) bn_sizes = {64, 128, 256};
      auto rows = vsscrowd::cmd_bench_scaling(bn_sizes, cfg);
      std::cout << vsscrowd::format_bench_table(rows);
    });
  }
  return vsscrowd::exit_code::config;  // unreachable: a subcommand is required
}
