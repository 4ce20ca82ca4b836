// Image codecs, annotation files, dataset loading, augmentation replay,
// synthetic scene generation, config round trips, checkpoints, and the
// prediction/report file formats.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vsscrowd/config.hpp"
#include "vsscrowd/data.hpp"
#include "vsscrowd/model.hpp"
#include "vsscrowd/pipeline.hpp"
#include "vsscrowd/pnm.hpp"
#include "vsscrowd/train.hpp"

using namespace vsscrowd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vsscrowd_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& rel = "") const { return (path / rel).string(); }
};

Tensor quantized_image(int64_t h, int64_t w, Rng& rng) {
  Tensor img({3, h, w});
  for (int64_t i = 0; i < img.numel(); ++i)
    img.data()[i] = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
  return img;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

// ---------------------------------------------------------------------------
// image files
// ---------------------------------------------------------------------------

TEST_CASE("a color image on the 8-bit grid round-trips exactly") {
  TempDir tmp("ppm_rt");
  Rng rng(501);
  Tensor img = quantized_image(4, 5, rng);
  write_ppm(tmp.str("a.ppm"), img);
  Tensor back = read_pnm(tmp.str("a.ppm"));
  REQUIRE(back.shape() == img.shape());
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(back.data()[i] == img.data()[i]);
}

TEST_CASE("arbitrary intensities survive one write within quantization error") {
  TempDir tmp("ppm_q");
  Rng rng(502);
  Tensor img({3, 3, 3});
  for (int64_t i = 0; i < img.numel(); ++i) img.data()[i] = rng.uniform(0.0, 1.0);
  write_ppm(tmp.str("q.ppm"), img);
  Tensor back = read_pnm(tmp.str("q.ppm"));
  for (int64_t i = 0; i < img.numel(); ++i)
    CHECK(std::abs(back.data()[i] - img.data()[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("grayscale images read back replicated across three channels") {
  TempDir tmp("pgm");
  std::ofstream out(tmp.str("g.pgm"), std::ios::binary);
  out << "P5\n2 2\n255\n";
  const unsigned char px[4] = {0, 64, 128, 255};
  out.write(reinterpret_cast<const char*>(px), 4);
  out.close();
  Tensor img = read_pnm(tmp.str("g.pgm"));
  REQUIRE(img.shape() == std::vector<int64_t>{3, 2, 2});
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(img.data()[c * 4 + 0] == 0.0);
    CHECK(img.data()[c * 4 + 1] == 64.0 / 255.0);
    CHECK(img.data()[c * 4 + 3] == 1.0);
  }
}

TEST_CASE("the image reader rejects unsupported and truncated files") {
  TempDir tmp("pnm_bad");
  {
    std::ofstream out(tmp.str("bad_magic.ppm"), std::ios::binary);
    out << "P3\n1 1\n255\n0 0 0\n";
  }
  CHECK_THROWS_AS(read_pnm(tmp.str("bad_magic.ppm")), InputError);
  {
    std::ofstream out(tmp.str("bad_maxval.ppm"), std::ios::binary);
    out << "P6\n1 1\n65535\n";
    const unsigned char px[6] = {0, 0, 0, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(px), 6);
  }
  CHECK_THROWS_AS(read_pnm(tmp.str("bad_maxval.ppm")), InputError);
  {
    std::ofstream out(tmp.str("short.ppm"), std::ios::binary);
    out << "P6\n2 2\n255\n";
    const unsigned char px[5] = {1, 2, 3, 4, 5};  // needs 12 bytes
    out.write(reinterpret_cast<const char*>(px), 5);
  }
  CHECK_THROWS_AS(read_pnm(tmp.str("short.ppm")), InputError);
  CHECK_THROWS_AS(read_pnm(tmp.str("missing.ppm")), InputError);
}

// ---------------------------------------------------------------------------
// annotation files
// ---------------------------------------------------------------------------

TEST_CASE("annotations round-trip with full double precision") {
  TempDir tmp("ann");
  PointSet pts;
  pts.points = {{0.1, 0.2}, {63.999999999999986, 1.0 / 3.0}};
  write_annotations(tmp.str("a.txt"), pts);
  PointSet back = read_annotations(tmp.str("a.txt"), "a");
  REQUIRE(back.size() == 2);
  CHECK(back.points[0].x == pts.points[0].x);
  CHECK(back.points[0].y == pts.points[0].y);
  CHECK(back.points[1].x == pts.points[1].x);
  CHECK(back.points[1].y == pts.points[1].y);
}

TEST_CASE("annotation parsing skips blank lines and rejects malformed ones") {
  TempDir tmp("ann_bad");
  {
    std::ofstream out(tmp.str("ok.txt"));
    out << "1.5 2.5\n\n   \n3.5 4.5\n";
  }
  PointSet ok = read_annotations(tmp.str("ok.txt"), "ok");
  REQUIRE(ok.size() == 2);
  CHECK(ok.points[1].x == 3.5);
  {
    std::ofstream out(tmp.str("extra.txt"));
    out << "1.0 2.0 3.0\n";
  }
  CHECK_THROWS_AS(read_annotations(tmp.str("extra.txt"), "extra"), InputError);
  {
    std::ofstream out(tmp.str("nonnum.txt"));
    out << "1.0 banana\n";
  }
  CHECK_THROWS_AS(read_annotations(tmp.str("nonnum.txt"), "nonnum"), InputError);
  {
    std::ofstream out(tmp.str("nonfinite.txt"));
    out << "nan 2.0\n";
  }
  CHECK_THROWS_AS(read_annotations(tmp.str("nonfinite.txt"), "nonfinite"), InputError);
  CHECK_THROWS_AS(read_annotations(tmp.str("absent.txt"), "absent"), InputError);
}

// ---------------------------------------------------------------------------
// dataset loading
// ---------------------------------------------------------------------------

TEST_CASE("the dataset loader resolves the manifest and sorts by id") {
  TempDir tmp("ds");
  Rng rng(511);
  Sample s1, s2;
  s1.id = "zebra";
  s1.image = quantized_image(16, 16, rng);
  s1.annotations.points = {{3.0, 4.0}};
  s2.id = "aardvark";
  s2.image = quantized_image(16, 16, rng);
  s2.annotations.points = {{1.0, 2.0}, {5.0, 6.0}};
  std::ofstream manifest(tmp.str("train.txt"));
  manifest << write_sample(tmp.str("images"), s1) << "\n";
  manifest << write_sample(tmp.str("images"), s2) << "\n";
  manifest.close();

  std::vector<Sample> loaded = load_dataset(tmp.str(), "train");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].id == "aardvark");
  CHECK(loaded[1].id == "zebra");
  CHECK(loaded[0].annotations.size() == 2);
  CHECK(loaded[1].annotations.size() == 1);
  CHECK(loaded[1].annotations.points[0].x == 3.0);
  for (int64_t i = 0; i < s1.image.numel(); ++i)
    CHECK(loaded[1].image.data()[i] == s1.image.data()[i]);
}

TEST_CASE("the dataset loader reports missing manifests and bad annotations") {
  TempDir tmp("ds_bad");
  CHECK_THROWS_AS(load_dataset(tmp.str(), "train"), InputError);

  Rng rng(512);
  Sample s;
  s.id = "oob";
  s.image = quantized_image(16, 16, rng);
  s.annotations.points = {{100.0, 3.0}};  // outside a 16x16 frame
  {
    std::ofstream manifest(tmp.str("train.txt"));
    manifest << write_sample(tmp.str("images"), s) << "\n";
  }
  CHECK_THROWS_MATCHES(
      load_dataset(tmp.str(), "train"), InputError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("oob")));
}

TEST_CASE("fifty written samples reload and rewrite byte-identically") {
  TempDir tmp("ds_rt");
  SynthConfig scfg;
  scfg.height = 32;
  scfg.width = 32;
  scfg.count_lo = 2;
  scfg.count_hi = 6;
  std::vector<Sample> originals = synth_generate(scfg, 50, 12345);
  {
    std::ofstream manifest(tmp.str("train.txt"));
    for (const Sample& s : originals) manifest << write_sample(tmp.str("round1"), s) << "\n";
  }
  std::vector<Sample> loaded = load_dataset(tmp.str(), "train");
  REQUIRE(loaded.size() == 50);
  for (const Sample& s : loaded) (void)write_sample(tmp.str("round2"), s);
  for (const Sample& s : loaded) {
    CHECK(slurp(tmp.str("round1/" + s.id + ".ppm")) == slurp(tmp.str("round2/" + s.id + ".ppm")));
    CHECK(slurp(tmp.str("round1/" + s.id + ".txt")) == slurp(tmp.str("round2/" + s.id + ".txt")));
  }
  // Annotations survive the quantization cycle exactly (they never quantize).
  for (size_t i = 0; i < 50; ++i) {
    REQUIRE(loaded[i].annotations.size() == originals[i].annotations.size());
    for (size_t j = 0; j < loaded[i].annotations.size(); ++j) {
      CHECK(loaded[i].annotations.points[j].x == originals[i].annotations.points[j].x);
      CHECK(loaded[i].annotations.points[j].y == originals[i].annotations.points[j].y);
    }
  }
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

AugmentConfig all_off() {
  AugmentConfig cfg;
  cfg.scale_prob = 0.0;
  cfg.hflip_prob = 0.0;
  cfg.color_jitter = 0.0;
  cfg.noise_std = 0.0;
  cfg.crop_size = 0;
  cfg.max_side = 0;
  return cfg;
}

Sample tiny_sample(Rng& rng, int64_t h = 8, int64_t w = 8) {
  Sample s;
  s.id = "t";
  s.image = quantized_image(h, w, rng);
  s.annotations.points = {{1.0, 2.0}, {6.5, 3.25}};
  return s;
}

}  // namespace

TEST_CASE("augmentation with every knob off is the identity") {
  Rng data_rng(521);
  Sample s = tiny_sample(data_rng);
  Rng rng(1);
  Sample out = augment(s, all_off(), rng);
  CHECK(out.image.values() == s.image.values());
  REQUIRE(out.annotations.size() == s.annotations.size());
  for (size_t i = 0; i < s.annotations.size(); ++i) {
    CHECK(out.annotations.points[i].x == s.annotations.points[i].x);
    CHECK(out.annotations.points[i].y == s.annotations.points[i].y);
  }
}

TEST_CASE("a certain horizontal flip mirrors pixels and annotations") {
  Rng data_rng(522);
  Sample s = tiny_sample(data_rng);
  AugmentConfig cfg = all_off();
  cfg.hflip_prob = 1.0;
  Rng rng(2);
  Sample out = augment(s, cfg, rng);
  const int64_t w = 8, h = 8;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        CHECK(out.image.data()[(c * h + y) * w + x] == s.image.data()[(c * h + y) * w + (w - 1 - x)]);
  CHECK(out.annotations.points[0].x == 7.0 - 1.0);
  CHECK(out.annotations.points[0].y == 2.0);
  CHECK(out.annotations.points[1].x == 7.0 - 6.5);
}

TEST_CASE("two flips restore the original sample") {
  Rng data_rng(523);
  Sample s = tiny_sample(data_rng);
  AugmentConfig cfg = all_off();
  cfg.hflip_prob = 1.0;
  Rng r1(3), r2(4);
  Sample twice = augment(augment(s, cfg, r1), cfg, r2);
  CHECK(twice.image.values() == s.image.values());
  CHECK(twice.annotations.points[0].x == s.annotations.points[0].x);
}

TEST_CASE("the same seed replays an identical augmentation") {
  Rng data_rng(524);
  Sample s = tiny_sample(data_rng, 16, 16);
  AugmentConfig cfg;  // defaults: everything on
  cfg.crop_size = 8;
  Rng r1(77), r2(77);
  Sample a = augment(s, cfg, r1);
  Sample b = augment(s, cfg, r2);
  CHECK(a.image.values() == b.image.values());
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (size_t i = 0; i < a.annotations.size(); ++i) {
    CHECK(a.annotations.points[i].x == b.annotations.points[i].x);
    CHECK(a.annotations.points[i].y == b.annotations.points[i].y);
  }
}

TEST_CASE("cropping keeps exactly the half-open window and shifts what stays") {
  Rng data_rng(525);
  Sample s;
  s.id = "grid";
  s.image = quantized_image(8, 8, data_rng);
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x)
      s.annotations.points.push_back({static_cast<double>(x), static_cast<double>(y)});
  AugmentConfig cfg = all_off();
  cfg.crop_size = 4;
  const uint64_t seed = 90;
  // Replay the generator's fixed draw order to learn the crop origin.
  Rng probe(seed);
  (void)probe.uniform();  // scale coin
  (void)probe.uniform();  // flip coin
  const int64_t y0 = probe.uniform_int(0, 4);
  const int64_t x0 = probe.uniform_int(0, 4);
  Rng rng(seed);
  Sample out = augment(s, cfg, rng);
  REQUIRE(out.image.shape() == std::vector<int64_t>{3, 4, 4});
  // The window is [x0, x0+4) x [y0, y0+4): 16 integer points survive.
  REQUIRE(out.annotations.size() == 16);
  for (const Point& p : out.annotations.points) {
    CHECK(p.x >= 0.0);
    CHECK(p.x < 4.0);
    CHECK(p.y >= 0.0);
    CHECK(p.y < 4.0);
  }
  // Pixels shift by the crop origin.
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x)
        CHECK(out.image.data()[(c * 4 + y) * 4 + x] ==
              s.image.data()[(c * 8 + (y0 + y)) * 8 + (x0 + x)]);
}

TEST_CASE("small images pad with zeros before cropping") {
  Sample s;
  s.id = "small";
  s.image = Tensor::full({3, 2, 2}, 0.5);
  s.annotations.points = {{1.0, 1.0}};
  AugmentConfig cfg = all_off();
  cfg.crop_size = 4;
  Rng rng(5);
  Sample out = augment(s, cfg, rng);
  REQUIRE(out.image.shape() == std::vector<int64_t>{3, 4, 4});
  CHECK(out.image.data()[0] == 0.5);       // original top-left
  CHECK(out.image.data()[3] == 0.0);       // padded column
  CHECK(out.image.data()[15] == 0.0);      // padded corner
  REQUIRE(out.annotations.size() == 1);
  CHECK(out.annotations.points[0].x == 1.0);
}

TEST_CASE("oversized images shrink to the configured longest side") {
  Rng data_rng(526);
  Sample s;
  s.id = "wide";
  s.image = quantized_image(8, 4, data_rng);
  s.annotations.points = {{1.0, 4.0}};
  AugmentConfig cfg = all_off();
  cfg.max_side = 4;
  Rng rng(6);
  Sample out = augment(s, cfg, rng);
  CHECK(out.image.shape() == std::vector<int64_t>{3, 4, 2});
  CHECK(out.annotations.size() == 1);
  CHECK(out.annotations.points[0].y <= 3.0);
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

TEST_CASE("an empty count range renders a background-only scene") {
  SynthConfig cfg;
  cfg.count_lo = 0;
  cfg.count_hi = 0;
  Rng rng(531);
  Sample s = synth_scene(cfg, "empty", rng);
  CHECK(s.annotations.size() == 0);
  CHECK(s.image.all_finite());
  for (int64_t i = 0; i < s.image.numel(); ++i) {
    CHECK(s.image.data()[i] >= 0.0);
    CHECK(s.image.data()[i] <= 1.0);
  }
}

TEST_CASE("a single blob puts the brightest pixel at its annotation") {
  SynthConfig cfg;
  cfg.count_lo = 1;
  cfg.count_hi = 1;
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Rng rng(seed);
    Sample s = synth_scene(cfg, "one", rng);
    REQUIRE(s.annotations.size() == 1);
    const int64_t w = cfg.width;
    int64_t best = 0;
    for (int64_t i = 1; i < cfg.height * w; ++i)
      if (s.image.data()[i] > s.image.data()[best]) best = i;
    CHECK(static_cast<double>(best % w) == s.annotations.points[0].x);
    CHECK(static_cast<double>(best / w) == s.annotations.points[0].y);
  }
}

TEST_CASE("generated blob centers respect the minimum separation") {
  SynthConfig cfg;
  cfg.count_lo = 8;
  cfg.count_hi = 12;
  Rng rng(532);
  Sample s = synth_scene(cfg, "sep", rng);
  const auto& pts = s.annotations.points;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j)
      CHECK(std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) >= cfg.min_separation);
}

TEST_CASE("nearly every blob is the local peak around its annotation") {
  SynthConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.count_lo = 3;
  cfg.count_hi = 8;
  std::vector<Sample> scenes = synth_generate(cfg, 100, 999);
  int64_t total = 0, peaked = 0;
  for (const Sample& s : scenes) {
    const int64_t h = cfg.height, w = cfg.width;
    for (const Point& p : s.annotations.points) {
      ++total;
      const int64_t cx = static_cast<int64_t>(p.x), cy = static_cast<int64_t>(p.y);
      // Brightest pixel within radius 3 of the center...
      int64_t by = cy, bx = cx;
      for (int64_t dy = -3; dy <= 3; ++dy)
        for (int64_t dx = -3; dx <= 3; ++dx) {
          const int64_t y = cy + dy, x = cx + dx;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          if (s.image.data()[y * w + x] > s.image.data()[by * w + bx]) {
            by = y;
            bx = x;
          }
        }
      // ...must sit within one pixel of the annotation.
      if (std::abs(by - cy) <= 1 && std::abs(bx - cx) <= 1) ++peaked;
    }
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(peaked) >= 0.99 * static_cast<double>(total));
}

TEST_CASE("scene generation is deterministic in the seed and id") {
  SynthConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  std::vector<Sample> a = synth_generate(cfg, 3, 777);
  std::vector<Sample> b = synth_generate(cfg, 3, 777);
  std::vector<Sample> c = synth_generate(cfg, 3, 778);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].image.values() == b[i].image.values());
    REQUIRE(a[i].annotations.size() == b[i].annotations.size());
    for (size_t j = 0; j < a[i].annotations.size(); ++j) {
      CHECK(a[i].annotations.points[j].x == b[i].annotations.points[j].x);
      CHECK(a[i].annotations.points[j].y == b[i].annotations.points[j].y);
    }
  }
  bool any_diff = false;
  for (size_t i = 0; i < 3 && !any_diff; ++i)
    any_diff = a[i].image.values() != c[i].image.values();
  CHECK(any_diff);
}

TEST_CASE("scene generation validates its dimensions and counts") {
  Rng rng(533);
  SynthConfig bad_dim;
  bad_dim.height = 60;
  CHECK_THROWS_AS(synth_scene(bad_dim, "x", rng), InputError);
  SynthConfig bad_count;
  bad_count.count_lo = 5;
  bad_count.count_hi = 2;
  CHECK_THROWS_AS(synth_scene(bad_count, "x", rng), ParameterError);
}

// ---------------------------------------------------------------------------
// configuration files
// ---------------------------------------------------------------------------

TEST_CASE("a fully customized config survives serialize-parse-serialize") {
  ModelConfig cfg;
  cfg.base_channels = 16;
  cfg.stage_depths = {1, 3, 2};
  cfg.state_dim = 4;
  cfg.lateral_channels = 24;
  cfg.vss_depth = 2;
  cfg.fusion_variant = FusionVariant::fgfp_like;
  cfg.mhf.num_heads = 2;
  cfg.mhf.reduction = 2;
  cfg.mhf.spatial_kernel = 5;
  cfg.mhf.connection = Connection::post;
  cfg.mhf.sigmoid_bound = false;
  cfg.mhf.broadcast_gate = false;
  cfg.head_hidden = 12;
  cfg.head_threshold = 0.35;
  cfg.ttc.cls = 0.9;
  cfg.ttc.loc = 0.31;
  cfg.ttc.cnt = 0.07;
  cfg.ttc_tau = 0.2;
  cfg.lr = 3e-3;
  cfg.steps = 42;
  cfg.eval_every = 7;
  cfg.early_stop = false;
  cfg.target_mae = 2.5;
  cfg.target_f1 = 0.8;
  cfg.early_stop_sigma = 4.0;
  cfg.seed = 99;
  cfg.augment_enabled = true;
  cfg.aug.scale_prob = 0.25;
  cfg.aug.crop_size = 32;

  const std::string text = serialize_config(cfg);
  ModelConfig back = parse_config(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.stage_depths == cfg.stage_depths);
  CHECK(back.fusion_variant == FusionVariant::fgfp_like);
  CHECK(back.mhf.connection == Connection::post);
  CHECK(back.mhf.sigmoid_bound == false);
  CHECK(back.head_threshold == cfg.head_threshold);
  CHECK(back.aug.scale_prob == 0.25);
}

TEST_CASE("config files round-trip through disk with comments intact") {
  TempDir tmp("cfg");
  ModelConfig cfg;
  cfg.seed = 7;
  save_config(tmp.str("m.txt"), cfg);
  ModelConfig back = load_config(tmp.str("m.txt"));
  CHECK(serialize_config(back) == serialize_config(cfg));
  {
    std::ofstream out(tmp.str("c.txt"));
    out << "# a comment\n\nseed = 12\n  steps =  5 \n";
  }
  ModelConfig partial = load_config(tmp.str("c.txt"));
  CHECK(partial.seed == 12);
  CHECK(partial.steps == 5);
  CHECK(partial.base_channels == 32);  // untouched default
  CHECK_THROWS_AS(load_config(tmp.str("missing.txt")), InputError);
}

TEST_CASE("unknown keys and malformed values are configuration errors") {
  CHECK_THROWS_MATCHES(parse_config("bogus = 1\n"), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("unknown config key")));
  CHECK_THROWS_AS(parse_config("steps = owl\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("early_stop = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("mhf_connection = sideways\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("fusion_variant = nonsense\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("stage_depths = 2,2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed\n"), ConfigError);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

ParamRegistry two_param_registry(double fill_a, double fill_b) {
  ParamRegistry reg;
  reg.add("a.weight", Tensor::full({2, 3}, fill_a));
  reg.add("b.bias", Tensor::full({4}, fill_b));
  return reg;
}

}  // namespace

TEST_CASE("checkpoints restore values and rewrite byte-identically") {
  TempDir tmp("ckpt");
  ParamRegistry src = two_param_registry(1.5, -2.25);
  save_checkpoint(tmp.str("w.bin"), src);
  ParamRegistry dst = two_param_registry(0.0, 0.0);
  load_checkpoint(tmp.str("w.bin"), dst);
  for (int64_t i = 0; i < 6; ++i) CHECK(dst.items[0].second.data()[i] == 1.5);
  for (int64_t i = 0; i < 4; ++i) CHECK(dst.items[1].second.data()[i] == -2.25);
  save_checkpoint(tmp.str("w2.bin"), dst);
  CHECK(slurp(tmp.str("w.bin")) == slurp(tmp.str("w2.bin")));
}

TEST_CASE("checkpoint loading reports the first manifest divergence") {
  TempDir tmp("ckpt_diff");
  ParamRegistry src = two_param_registry(1.0, 2.0);
  save_checkpoint(tmp.str("w.bin"), src);

  ParamRegistry fewer;
  fewer.add("a.weight", Tensor::full({2, 3}, 0.0));
  CHECK_THROWS_MATCHES(load_checkpoint(tmp.str("w.bin"), fewer), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("manifest diff")));

  ParamRegistry renamed;
  renamed.add("a.weight", Tensor::full({2, 3}, 0.0));
  renamed.add("c.bias", Tensor::full({4}, 0.0));
  CHECK_THROWS_MATCHES(load_checkpoint(tmp.str("w.bin"), renamed), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("b.bias")));

  ParamRegistry reshaped;
  reshaped.add("a.weight", Tensor::full({3, 2}, 0.0));
  reshaped.add("b.bias", Tensor::full({4}, 0.0));
  CHECK_THROWS_AS(load_checkpoint(tmp.str("w.bin"), reshaped), ConfigError);

  {
    std::ofstream out(tmp.str("junk.bin"), std::ios::binary);
    out << "NOTACKPT garbage";
  }
  ParamRegistry any = two_param_registry(0.0, 0.0);
  CHECK_THROWS_AS(load_checkpoint(tmp.str("junk.bin"), any), InputError);
  CHECK_THROWS_AS(load_checkpoint(tmp.str("absent.bin"), any), InputError);
}

// ---------------------------------------------------------------------------
// prediction files, overlays, padding, reports
// ---------------------------------------------------------------------------

TEST_CASE("prediction files round-trip points and confidences exactly") {
  TempDir tmp("pred");
  PointSet pts;
  pts.points = {{1.25, 2.5}, {3.0, 0.1}};
  pts.confidences = {0.75, 1.0 / 3.0};
  write_prediction_file(tmp.str("p.txt"), pts);
  PointSet back = read_prediction_file(tmp.str("p.txt"));
  REQUIRE(back.size() == 2);
  CHECK(back.points[0].x == 1.25);
  CHECK(back.points[1].y == 0.1);
  CHECK(back.confidences[1] == 1.0 / 3.0);
}

TEST_CASE("prediction files validate their header and count") {
  TempDir tmp("pred_bad");
  {
    std::ofstream out(tmp.str("nohdr.txt"));
    out << "1.0 2.0 0.5\n";
  }
  CHECK_THROWS_AS(read_prediction_file(tmp.str("nohdr.txt")), InputError);
  {
    std::ofstream out(tmp.str("mismatch.txt"));
    out << "count=3\n1.0 2.0 0.5\n";
  }
  CHECK_THROWS_AS(read_prediction_file(tmp.str("mismatch.txt")), InputError);
  CHECK_THROWS_AS(read_prediction_file(tmp.str("absent.txt")), InputError);
}

TEST_CASE("the overlay paints red crosses at rounded point centers") {
  Tensor img = Tensor::full({3, 8, 8}, 0.5);
  PointSet pts;
  pts.points = {{3.2, 4.6}};  // rounds to (3,5)
  Tensor over = render_overlay(img, pts);
  const int64_t plane = 64;
  CHECK(over.data()[5 * 8 + 3] == 1.0);              // R at center
  CHECK(over.data()[plane + 5 * 8 + 3] == 0.0);      // G cleared
  CHECK(over.data()[5 * 8 + 1] == 1.0);              // arm extends 2 px left
  CHECK(over.data()[3 * 8 + 3] == 1.0);              // and 2 px up
  CHECK(over.data()[0] == 0.5);                      // far pixels untouched
  // The input is not modified.
  CHECK(img.data()[5 * 8 + 3] == 0.5);
}

TEST_CASE("padding to a multiple of 16 preserves content and zero-fills") {
  Rng rng(541);
  Tensor img = quantized_image(20, 30, rng);
  Tensor padded = pad_to_multiple16(img);
  REQUIRE(padded.shape() == std::vector<int64_t>{3, 32, 32});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 20; ++y)
      for (int64_t x = 0; x < 30; ++x)
        CHECK(padded.data()[(c * 32 + y) * 32 + x] == img.data()[(c * 20 + y) * 30 + x]);
  CHECK(padded.data()[31] == 0.0);
  // Aligned images come back unchanged.
  Tensor aligned = quantized_image(16, 32, rng);
  Tensor same = pad_to_multiple16(aligned);
  CHECK(same.shape() == aligned.shape());
  CHECK(same.values() == aligned.values());
}

TEST_CASE("the evaluation report carries count and localization keys") {
  EvalResult ev;
  ev.count.pairs = {{5.0, 4.0}, {3.0, 3.0}};
  ev.count.mae = 0.5;
  ev.count.mse_paper = 0.25;
  ev.count.rmse = 0.5;
  LocReport std_r;
  std_r.sigma = 8.0;
  std_r.tp = 7;
  std_r.precision = 0.875;
  std_r.recall = 0.7;
  std_r.f1 = 0.778;
  LocReport paper_r = std_r;
  paper_r.convention = LocConvention::paper_text;
  ev.loc_standard = {std_r};
  ev.loc_paper_text = {paper_r};
  const std::string report = format_eval_report(ev);
  CHECK(report.find("images=2") != std::string::npos);
  CHECK(report.find("count.mae=0.5") != std::string::npos);
  CHECK(report.find("loc.sigma8.standard.tp=7") != std::string::npos);
  CHECK(report.find("loc.sigma8.paper_text.precision=") != std::string::npos);
  CHECK(report.find("loc.sigma8.standard.f1=") != std::string::npos);
}

// ---------------------------------------------------------------------------
// evaluation workers
// ---------------------------------------------------------------------------

TEST_CASE("the worker count honors and validates its environment override") {
  unsetenv("VSSCROWD_THREADS");
  CHECK(worker_count(4) >= 1);
  CHECK(worker_count(4) <= 4);
  setenv("VSSCROWD_THREADS", "1", 1);
  CHECK(worker_count(8) == 1);
  setenv("VSSCROWD_THREADS", "owl", 1);
  CHECK_THROWS_AS(worker_count(8), ConfigError);
  setenv("VSSCROWD_THREADS", "0", 1);
  CHECK_THROWS_AS(worker_count(8), ConfigError);
  unsetenv("VSSCROWD_THREADS");
}

TEST_CASE("evaluation pools matches identically across worker counts") {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.stage_depths = {1, 1, 1};
  cfg.state_dim = 2;
  cfg.lateral_channels = 8;
  cfg.head_hidden = 4;
  cfg.seed = 3;
  Model model(cfg);
  SynthConfig scfg;
  scfg.height = 32;
  scfg.width = 32;
  scfg.count_lo = 2;
  scfg.count_hi = 5;
  std::vector<Sample> samples = synth_generate(scfg, 3, 55);

  unsetenv("VSSCROWD_THREADS");
  setenv("VSSCROWD_THREADS", "1", 1);
  EvalResult serial = evaluate_model(model, samples, {4.0, 8.0}, 0.5);
  setenv("VSSCROWD_THREADS", "3", 1);
  EvalResult parallel = evaluate_model(model, samples, {4.0, 8.0}, 0.5);
  unsetenv("VSSCROWD_THREADS");

  CHECK(serial.count.mae == parallel.count.mae);
  REQUIRE(serial.loc_standard.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(serial.loc_standard[i].tp == parallel.loc_standard[i].tp);
    CHECK(serial.loc_standard[i].f1 == parallel.loc_standard[i].f1);
  }
  CHECK_THROWS_AS(evaluate_model(model, {}, {8.0}, 0.5), ParameterError);
}
