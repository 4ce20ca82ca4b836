// Route geometry, state-recurrence oracles, flop accounting, and the residual
// contract of the scan block, plus backbone shape arithmetic.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vsscrowd/backbone.hpp"
#include "vsscrowd/scan.hpp"

using namespace vsscrowd;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// route geometry
// ---------------------------------------------------------------------------

TEST_CASE("the four routes on a 2x2 grid visit the expected orders") {
  Tensor x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  auto seqs = cross_scan(x);
  CHECK(seqs[0].values() == std::vector<double>{1, 2, 3, 4});  // row-major
  CHECK(seqs[1].values() == std::vector<double>{4, 3, 2, 1});  // reversed row-major
  CHECK(seqs[2].values() == std::vector<double>{1, 3, 2, 4});  // column-major
  CHECK(seqs[3].values() == std::vector<double>{4, 2, 3, 1});  // reversed column-major
}

TEST_CASE("all four routes coincide on a 1x1 grid") {
  Tensor x = Tensor::from_data({2, 1, 1}, {5.0, -1.0});
  auto seqs = cross_scan(x);
  for (int r = 0; r < 4; ++r) {
    CHECK(seqs[r].shape() == std::vector<int64_t>{2, 1});
    CHECK(seqs[r].values() == std::vector<double>{5.0, -1.0});
  }
}

TEST_CASE("each route index list is a permutation of the grid") {
  auto idx = scan_routes(3, 5);
  for (int r = 0; r < 4; ++r) {
    std::vector<int64_t> sorted = idx[r];
    std::sort(sorted.begin(), sorted.end());
    for (int64_t t = 0; t < 15; ++t) CHECK(sorted[static_cast<size_t>(t)] == t);
  }
  // Route 1 reverses route 0; route 3 reverses route 2.
  for (int64_t t = 0; t < 15; ++t) {
    CHECK(idx[1][static_cast<size_t>(t)] == idx[0][static_cast<size_t>(14 - t)]);
    CHECK(idx[3][static_cast<size_t>(t)] == idx[2][static_cast<size_t>(14 - t)]);
  }
  // Route 2 is the column-major walk.
  CHECK(idx[2][0] == 0);
  CHECK(idx[2][1] == 5);
  CHECK(idx[2][2] == 10);
  CHECK(idx[2][3] == 1);
}

TEST_CASE("merging the scanned routes recovers four times the input") {
  Rng rng(41);
  Tensor x = random_tensor({3, 4, 6}, rng);
  Tensor merged = cross_merge(cross_scan(x), 4, 6);
  REQUIRE(merged.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(merged.data()[i] == Catch::Approx(4.0 * x.data()[i]).margin(1e-15));
}

TEST_CASE("cross_merge of zero sequences is zero") {
  std::array<Tensor, 4> seqs = {Tensor::zeros({2, 6}), Tensor::zeros({2, 6}),
                                Tensor::zeros({2, 6}), Tensor::zeros({2, 6})};
  Tensor merged = cross_merge(seqs, 2, 3);
  for (int64_t i = 0; i < merged.numel(); ++i) CHECK(merged.data()[i] == 0.0);
}

TEST_CASE("cross_merge equals a scatter-accumulate oracle on random sequences") {
  Rng rng(42);
  const int64_t c = 2, h = 3, w = 4, l = h * w;
  std::array<Tensor, 4> seqs = {random_tensor({c, l}, rng), random_tensor({c, l}, rng),
                                random_tensor({c, l}, rng), random_tensor({c, l}, rng)};
  Tensor merged = cross_merge(seqs, h, w);
  auto idx = scan_routes(h, w);
  std::vector<double> want(static_cast<size_t>(c * l), 0.0);
  for (int r = 0; r < 4; ++r)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t t = 0; t < l; ++t)
        want[static_cast<size_t>(ch * l + idx[r][static_cast<size_t>(t)])] +=
            seqs[static_cast<size_t>(r)].data()[ch * l + t];
  for (int64_t i = 0; i < merged.numel(); ++i)
    CHECK(merged.data()[i] == Catch::Approx(want[static_cast<size_t>(i)]).margin(1e-15));
}

TEST_CASE("cross_merge rejects sequences of the wrong length") {
  std::array<Tensor, 4> seqs = {Tensor::zeros({1, 5}), Tensor::zeros({1, 6}),
                                Tensor::zeros({1, 6}), Tensor::zeros({1, 6})};
  CHECK_THROWS_AS(cross_merge(seqs, 2, 3), DimensionError);
}

// ---------------------------------------------------------------------------
// state recurrence
// ---------------------------------------------------------------------------

TEST_CASE("the recurrence degenerates to a prefix sum with unit decay and unit gates") {
  Rng rng(51);
  const int64_t d = 3, l = 10, n = 1;
  Tensor u = random_tensor({d, l}, rng);
  Tensor delta = Tensor::full({d, l}, 1.0);
  Tensor a = Tensor::zeros({d, n});  // exp(delta * 0) = 1: perfect memory
  Tensor b = Tensor::full({n, l}, 1.0);
  Tensor c = Tensor::full({n, l}, 1.0);
  Tensor d_skip = Tensor::zeros({d});
  Tensor y = ssm_scan(u, delta, a, b, c, d_skip);
  for (int64_t ch = 0; ch < d; ++ch) {
    double acc = 0.0;
    for (int64_t t = 0; t < l; ++t) {
      acc += u.data()[ch * l + t];
      CHECK(y.data()[ch * l + t] == Catch::Approx(acc).margin(1e-12));
    }
  }
}

TEST_CASE("a length-1 scan unrolls to its closed form") {
  const double uv = 0.7, dv = 0.3, av = -1.2, bv = 0.9, cv = 1.1, sk = 0.25;
  Tensor y = ssm_scan(Tensor::from_data({1, 1}, {uv}), Tensor::from_data({1, 1}, {dv}),
                      Tensor::from_data({1, 1}, {av}), Tensor::from_data({1, 1}, {bv}),
                      Tensor::from_data({1, 1}, {cv}), Tensor::from_data({1}, {sk}));
  const double h1 = dv * bv * uv;  // h0 = 0
  const double want = cv * h1 + sk * uv;
  CHECK(y.data()[0] == Catch::Approx(want).margin(1e-15));
}

TEST_CASE("a 16-step scan matches the literal recurrence to 1e-12") {
  Rng rng(52);
  const int64_t d = 2, l = 16, n = 3;
  Tensor u = random_tensor({d, l}, rng);
  Tensor delta = random_tensor({d, l}, rng, 0.05, 0.8);
  Tensor a = random_tensor({d, n}, rng, -2.0, -0.1);
  Tensor b = random_tensor({n, l}, rng);
  Tensor c = random_tensor({n, l}, rng);
  Tensor d_skip = random_tensor({d}, rng);
  Tensor y = ssm_scan(u, delta, a, b, c, d_skip);
  for (int64_t ch = 0; ch < d; ++ch) {
    std::vector<double> h(static_cast<size_t>(n), 0.0);
    for (int64_t t = 0; t < l; ++t) {
      const double dt = delta.data()[ch * l + t];
      const double ut = u.data()[ch * l + t];
      double yt = d_skip.data()[ch] * ut;
      for (int64_t i = 0; i < n; ++i) {
        h[static_cast<size_t>(i)] = std::exp(dt * a.data()[ch * n + i]) * h[static_cast<size_t>(i)] +
                                    dt * b.data()[i * l + t] * ut;
        yt += c.data()[i * l + t] * h[static_cast<size_t>(i)];
      }
      CHECK(std::abs(y.data()[ch * l + t] - yt) < 1e-12);
    }
  }
}

TEST_CASE("the scan is causal: later inputs never change earlier outputs") {
  Rng rng(53);
  const int64_t d = 2, l = 12, n = 2;
  Tensor u1 = random_tensor({d, l}, rng);
  Tensor u2 = u1;
  Tensor u2_copy({d, l});
  std::copy(u1.values().begin(), u1.values().end(), u2_copy.data());
  // Change only the final three steps.
  for (int64_t ch = 0; ch < d; ++ch)
    for (int64_t t = l - 3; t < l; ++t) u2_copy.data()[ch * l + t] += 5.0;
  Tensor delta = random_tensor({d, l}, rng, 0.1, 0.5);
  Tensor a = random_tensor({d, n}, rng, -1.5, -0.2);
  Tensor b = random_tensor({n, l}, rng);
  Tensor c = random_tensor({n, l}, rng);
  Tensor d_skip = random_tensor({d}, rng);
  Tensor y1 = ssm_scan(u1, delta, a, b, c, d_skip);
  Tensor y2 = ssm_scan(u2_copy, delta, a, b, c, d_skip);
  for (int64_t ch = 0; ch < d; ++ch) {
    for (int64_t t = 0; t < l - 3; ++t) CHECK(y1.data()[ch * l + t] == y2.data()[ch * l + t]);
    CHECK(y1.data()[ch * l + l - 1] != y2.data()[ch * l + l - 1]);
  }
}

TEST_CASE("the scan reports a non-finite state with the offending step") {
  Tensor u = Tensor::from_data({1, 3}, {1e308, 1e308, 1.0});
  Tensor delta = Tensor::full({1, 3}, 1.0);
  Tensor a = Tensor::zeros({1, 1});
  Tensor b = Tensor::full({1, 3}, 1.0);
  Tensor c = Tensor::full({1, 3}, 1.0);
  Tensor d_skip = Tensor::zeros({1});
  CHECK_THROWS_MATCHES(ssm_scan(u, delta, a, b, c, d_skip), NumericError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("non-finite state at step 1")));
}

TEST_CASE("the scan rejects disagreeing operand shapes") {
  Tensor u({2, 5});
  Tensor delta({2, 4});
  Tensor a({2, 3});
  Tensor b({3, 5});
  Tensor c({3, 5});
  Tensor d_skip({2});
  CHECK_THROWS_AS(ssm_scan(u, delta, a, b, c, d_skip), DimensionError);
}

TEST_CASE("flop accounting books L*D*(8N+2) per scan call") {
  reset_scan_flops();
  const int64_t d = 3, l = 7, n = 4;
  Tensor u = Tensor::zeros({d, l});
  Tensor delta = Tensor::full({d, l}, 0.5);
  Tensor a = Tensor::full({d, n}, -1.0);
  Tensor b = Tensor::zeros({n, l});
  Tensor c = Tensor::zeros({n, l});
  Tensor d_skip = Tensor::zeros({d});
  ssm_scan(u, delta, a, b, c, d_skip);
  CHECK(scan_flops() == static_cast<uint64_t>(l * d * (8 * n + 2)));
  ssm_scan(u, delta, a, b, c, d_skip);
  CHECK(scan_flops() == 2ULL * static_cast<uint64_t>(l * d * (8 * n + 2)));
  reset_scan_flops();
  CHECK(scan_flops() == 0);
}

// ---------------------------------------------------------------------------
// input-conditioned scan
// ---------------------------------------------------------------------------

TEST_CASE("crafted projections make the conditioned scan a prefix sum") {
  Rng rng(61);
  const int64_t d = 2, n = 2, rank = 1, l = 16;
  ScanParams p(d, n, rank, rng);
  // Zero every weight so the per-step gates come from the biases alone.
  std::fill(p.x_proj.w.values().begin(), p.x_proj.w.values().end(), 0.0);
  std::fill(p.dt_proj.w.values().begin(), p.dt_proj.w.values().end(), 0.0);
  // delta = softplus(bias) = 1;  B = C = 1 per state;  decay a ~ 0.
  std::fill(p.dt_proj.b.values().begin(), p.dt_proj.b.values().end(), init::inv_softplus(1.0));
  for (int64_t r = 0; r < rank; ++r) p.x_proj.b.data()[r] = 0.0;
  for (int64_t i = 0; i < 2 * n; ++i) p.x_proj.b.data()[rank + i] = 1.0;
  std::fill(p.a_log.values().begin(), p.a_log.values().end(), -40.0);  // a = -exp(-40) ~ 0
  std::fill(p.d_skip.values().begin(), p.d_skip.values().end(), 0.0);

  Tensor u = random_tensor({d, l}, rng);
  Tensor y = selective_scan(u, p);
  // Two states each integrate u, so y is twice the prefix sum.
  for (int64_t ch = 0; ch < d; ++ch) {
    double acc = 0.0;
    for (int64_t t = 0; t < l; ++t) {
      acc += u.data()[ch * l + t];
      CHECK(y.data()[ch * l + t] == Catch::Approx(2.0 * acc).margin(1e-12));
    }
  }
}

TEST_CASE("the conditioned scan rejects non-2D input") {
  Rng rng(62);
  ScanParams p(2, 2, 1, rng);
  CHECK_THROWS_AS(selective_scan(Tensor::zeros({2, 3, 4}), p), DimensionError);
}

TEST_CASE("scan parameter initialization follows its contracts") {
  Rng rng(63);
  const int64_t d = 6, n = 3, rank = 2;
  ScanParams p(d, n, rank, rng);
  REQUIRE(p.a_log.shape() == std::vector<int64_t>{d, n});
  for (int64_t ch = 0; ch < d; ++ch)
    for (int64_t i = 0; i < n; ++i)
      CHECK(p.a_log.data()[ch * n + i] == Catch::Approx(std::log(static_cast<double>(i + 1))));
  for (int64_t ch = 0; ch < d; ++ch) CHECK(p.d_skip.data()[ch] == 1.0);
  REQUIRE(p.x_proj.w.shape() == std::vector<int64_t>{rank + 2 * n, d});
  REQUIRE(p.dt_proj.w.shape() == std::vector<int64_t>{d, rank});
  // The step-size bias lands softplus(bias) inside the configured range.
  for (int64_t ch = 0; ch < d; ++ch) {
    const double dt = std::log1p(std::exp(p.dt_proj.b.data()[ch]));
    CHECK(dt >= 1e-3 * 0.999);
    CHECK(dt <= 1e-1 * 1.001);
  }
}

// ---------------------------------------------------------------------------
// scan block
// ---------------------------------------------------------------------------

TEST_CASE("the scan block preserves its input shape") {
  Rng rng(71);
  for (auto [c, h, w] : {std::tuple<int64_t, int64_t, int64_t>{2, 3, 5},
                         std::tuple<int64_t, int64_t, int64_t>{4, 4, 4},
                         std::tuple<int64_t, int64_t, int64_t>{3, 1, 7}}) {
    VssBlock blk(c, 2, rng);
    Tensor x = random_tensor({c, h, w}, rng);
    Tensor y = blk.forward(x);
    CHECK(y.shape() == x.shape());
    CHECK(y.all_finite());
  }
}

TEST_CASE("zeroing the output projection reduces the scan block to the identity") {
  Rng rng(72);
  VssBlock blk(3, 2, rng);
  std::fill(blk.out_proj.w.values().begin(), blk.out_proj.w.values().end(), 0.0);
  std::fill(blk.out_proj.b.values().begin(), blk.out_proj.b.values().end(), 0.0);
  Tensor x = random_tensor({3, 4, 4}, rng);
  Tensor y = blk.forward(x);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("the scan block registers one parameter set per route") {
  Rng rng(73);
  VssBlock blk(2, 2, rng);
  ParamRegistry reg;
  blk.register_params(reg, "blk");
  int routes = 0;
  for (const auto& [name, t] : reg.items)
    if (name.find(".route") != std::string::npos && name.find("a_log") != std::string::npos)
      ++routes;
  CHECK(routes == 4);
}

// ---------------------------------------------------------------------------
// backbone
// ---------------------------------------------------------------------------

TEST_CASE("the backbone produces the documented pyramid shapes") {
  Rng rng(81);
  Backbone bb(8, {1, 1, 1}, 2, rng);
  Tensor img = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  FeaturePyramid pyr = bb.forward(img);
  CHECK(pyr.f1.shape() == std::vector<int64_t>{8, 16, 16});
  CHECK(pyr.f2.shape() == std::vector<int64_t>{16, 8, 8});
  CHECK(pyr.f3.shape() == std::vector<int64_t>{32, 4, 4});

  Tensor img2 = random_tensor({3, 32, 48}, rng, 0.0, 1.0);
  FeaturePyramid pyr2 = bb.forward(img2);
  CHECK(pyr2.f1.shape() == std::vector<int64_t>{8, 8, 12});
  CHECK(pyr2.f2.shape() == std::vector<int64_t>{16, 4, 6});
  CHECK(pyr2.f3.shape() == std::vector<int64_t>{32, 2, 3});
}

TEST_CASE("the backbone refuses images whose sides are not multiples of 16") {
  Rng rng(82);
  Backbone bb(4, {1, 1, 1}, 2, rng);
  CHECK_THROWS_MATCHES(
      bb.forward(Tensor::zeros({3, 60, 64})), InputError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("multiple of 16")));
  CHECK_THROWS_AS(bb.forward(Tensor::zeros({1, 64, 64})), InputError);
}

TEST_CASE("backbone stage depths control the number of scan blocks") {
  Rng rng(83);
  Backbone bb(4, {2, 3, 1}, 2, rng);
  CHECK(bb.stage1.size() == 2);
  CHECK(bb.stage2.size() == 3);
  CHECK(bb.stage3.size() == 1);
}
