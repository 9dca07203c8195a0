#include <doctest.h>

#include <cmath>

#include "hnseg/loss.hpp"
#include "helpers.hpp"

using namespace hnseg;
using testutil::fd_check;
using testutil::random_tensor;

TEST_SUITE_BEGIN("loss");

namespace {

LabelPatch random_target(std::int64_t n, std::int64_t d, Rng& rng) {
  LabelPatch t;
  t.shape = {n, d, d, d};
  t.labels.resize(std::size_t(n * d * d * d));
  for (auto& l : t.labels) l = std::uint8_t(rng.uniform_int(3));
  return t;
}

// scalar re-implementation, written elementwise with plain doubles; the
// independent oracle for the fused op
double oracle_dice_ce(const std::vector<double>& logits, std::int64_t N,
                      std::int64_t C, std::int64_t V,
                      const std::vector<std::uint8_t>& target, double smooth,
                      bool include_bg) {
  double ce = 0.0;
  std::vector<double> sum_pg(std::size_t(N * C), 0.0), sum_p(std::size_t(N * C), 0.0),
      sum_g(std::size_t(N * C), 0.0);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t v = 0; v < V; ++v) {
      double denom = 0.0;
      for (std::int64_t c = 0; c < C; ++c)
        denom += std::exp(logits[std::size_t((n * C + c) * V + v)]);
      const std::int64_t t = target[std::size_t(n * V + v)];
      ce += -std::log(std::exp(logits[std::size_t((n * C + t) * V + v)]) / denom);
      for (std::int64_t c = 0; c < C; ++c) {
        const double p = std::exp(logits[std::size_t((n * C + c) * V + v)]) / denom;
        sum_p[std::size_t(n * C + c)] += p;
        if (c == t) sum_pg[std::size_t(n * C + c)] += p;
      }
      sum_g[std::size_t(n * C + t)] += 1.0;
    }
  ce /= double(N * V);
  double dice = 0.0;
  const std::int64_t c0 = include_bg ? 0 : 1;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = c0; c < C; ++c) {
      const double num = 2.0 * sum_pg[std::size_t(n * C + c)] + smooth;
      const double den =
          sum_p[std::size_t(n * C + c)] + sum_g[std::size_t(n * C + c)] + smooth;
      dice += 1.0 - num / den;
    }
  dice /= double(N * (C - c0));
  return dice + ce;
}

}  // namespace

TEST_CASE("strong correct logits give near-zero loss") {
  // all three classes present so no dice term is vacuous
  LabelPatch t;
  t.shape = {1, 4, 4, 4};
  t.labels.assign(64, 0);
  for (int i = 0; i < 20; ++i) t.labels[std::size_t(i)] = 1;
  for (int i = 20; i < 40; ++i) t.labels[std::size_t(i)] = 2;
  auto logits = make_tensor<double>({1, 3, 4, 4, 4});
  for (std::int64_t v = 0; v < 64; ++v)
    logits->values[std::size_t(t.labels[std::size_t(v)] * 64 + v)] = 20.0;
  auto loss = dice_ce<double>(nullptr, logits, t, LossConfig{});
  CHECK(loss->values[0] < 1e-4);
  CHECK(loss->values[0] >= 0.0);
}

TEST_CASE("uniform logits give CE = ln 3 exactly") {
  LabelPatch t;
  t.shape = {1, 2, 2, 2};
  t.labels = {0, 1, 2, 0, 1, 2, 0, 1};
  auto logits = make_tensor<double>({1, 3, 2, 2, 2});
  DiceCeParts<double> parts{};
  dice_ce<double>(nullptr, logits, t, LossConfig{}, &parts);
  CHECK(parts.ce == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("fused op matches the scalar oracle on random instances") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t N = 1 + rng.uniform_int(2), d = 2;
    auto logits = random_tensor<double>({N, 3, d, d, d}, rng, false, -3.0, 3.0);
    LabelPatch t = random_target(N, d, rng);
    LossConfig cfg;
    cfg.include_background = trial % 2 == 0;
    auto loss = dice_ce<double>(nullptr, logits, t, cfg);
    const double expect =
        oracle_dice_ce(logits->values, N, 3, d * d * d, t.labels,
                       cfg.dice_smooth, cfg.include_background);
    CHECK(loss->values[0] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE_TEMPLATE("dice_ce gradient matches finite differences", T, float,
                   double) {
  const double tol = std::is_same_v<T, double> ? 1e-4 : 1e-2;
  Rng rng(2);
  auto logits = random_tensor<T>({1, 3, 4, 4, 4}, rng, true, -2.0, 2.0);
  LabelPatch t = random_target(1, 4, rng);
  auto fwd = [&](Graph<T>* g) { return dice_ce(g, logits, t, LossConfig{}); };
  CHECK(fd_check<T>(fwd, logits, rng) < tol);
}

TEST_CASE("loss is nonnegative and finite for wild logits") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = random_tensor<float>({1, 3, 4, 4, 4}, rng, false, -80.0, 80.0);
    LabelPatch t = random_target(1, 4, rng);
    auto loss = dice_ce<float>(nullptr, logits, t, LossConfig{});
    CHECK(std::isfinite(loss->values[0]));
    CHECK(loss->values[0] >= -1e-6f);
  }
}

TEST_CASE("batch order permutation leaves the loss unchanged") {
  Rng rng(4);
  auto logits = random_tensor<double>({2, 3, 3, 3, 3}, rng, false, -2.0, 2.0);
  LabelPatch t = random_target(2, 3, rng);
  auto swapped = make_tensor<double>(logits->shape);
  LabelPatch t2 = t;
  const std::size_t half = logits->values.size() / 2;
  std::copy(logits->values.begin() + std::ptrdiff_t(half), logits->values.end(),
            swapped->values.begin());
  std::copy(logits->values.begin(), logits->values.begin() + std::ptrdiff_t(half),
            swapped->values.begin() + std::ptrdiff_t(half));
  const std::size_t thalf = t.labels.size() / 2;
  std::copy(t.labels.begin() + std::ptrdiff_t(thalf), t.labels.end(),
            t2.labels.begin());
  std::copy(t.labels.begin(), t.labels.begin() + std::ptrdiff_t(thalf),
            t2.labels.begin() + std::ptrdiff_t(thalf));
  auto a = dice_ce<double>(nullptr, logits, t, LossConfig{});
  auto b = dice_ce<double>(nullptr, swapped, t2, LossConfig{});
  CHECK(a->values[0] == doctest::Approx(b->values[0]).epsilon(1e-12));
}

TEST_CASE("raising the correct-class logit never increases CE") {
  Rng rng(5);
  auto logits = random_tensor<double>({1, 3, 2, 2, 2}, rng, false, -2.0, 2.0);
  LabelPatch t = random_target(1, 2, rng);
  DiceCeParts<double> before{}, after{};
  dice_ce<double>(nullptr, logits, t, LossConfig{}, &before);
  for (std::int64_t v = 0; v < 8; ++v) {
    auto bumped = make_tensor<double>(logits->shape, std::vector<double>(logits->values));
    bumped->values[std::size_t(t.labels[std::size_t(v)] * 8 + v)] += 0.5;
    dice_ce<double>(nullptr, bumped, t, LossConfig{}, &after);
    CHECK(after.ce <= before.ce + 1e-12);
  }
}

TEST_CASE("invalid target labels and shape mismatches are rejected") {
  auto logits = make_tensor<float>({1, 3, 2, 2, 2});
  LabelPatch bad;
  bad.shape = {1, 2, 2, 2};
  bad.labels.assign(8, 7);
  CHECK_THROWS_AS(dice_ce<float>(nullptr, logits, bad, LossConfig{}),
                  ArgumentError);
  LabelPatch wrong;
  wrong.shape = {1, 3, 3, 3};
  wrong.labels.assign(27, 0);
  CHECK_THROWS_AS(dice_ce<float>(nullptr, logits, wrong, LossConfig{}),
                  ShapeError);
}

TEST_CASE("single-level deep supervision equals dice_ce") {
  Rng rng(6);
  auto logits = random_tensor<double>({1, 3, 4, 4, 4}, rng, false, -2.0, 2.0);
  LabelPatch t = random_target(1, 4, rng);
  auto a = dice_ce<double>(nullptr, logits, t, LossConfig{});
  auto b = deep_supervision_loss<double>(nullptr, {logits}, t, LossConfig{});
  CHECK(a->values[0] == doctest::Approx(b->values[0]).epsilon(1e-15));
}

TEST_CASE("five equal sublevel losses sum with weights 1/2^i to 1.9375 L") {
  // constant logits and a constant class-1 target keep every level's loss
  // identical; a tiny smoothing constant removes the O(smooth/V) size effect
  LossConfig cfg;
  cfg.dice_smooth = 1e-12;
  LabelPatch t;
  t.shape = {1, 16, 16, 16};
  t.labels.assign(16 * 16 * 16, 1);
  std::vector<Tensor<double>> preds;
  std::vector<double> level_losses;
  for (int i = 0; i < 5; ++i) {
    const std::int64_t d = 16 >> i;
    auto logits = make_tensor<double>({1, 3, d, d, d});
    for (std::int64_t v = 0; v < d * d * d; ++v)
      logits->values[std::size_t(d * d * d + v)] = 5.0;  // channel 1 favored
    preds.push_back(logits);
    LabelPatch ti;
    ti.shape = {1, d, d, d};
    ti.labels.assign(std::size_t(d * d * d), 1);
    level_losses.push_back(
        dice_ce<double>(nullptr, logits, ti, cfg)->values[0]);
  }
  const double L = level_losses[0];
  for (const double l : level_losses)
    CHECK(l == doctest::Approx(L).epsilon(1e-9));

  auto total = deep_supervision_loss<double>(nullptr, preds, t, cfg);
  CHECK(std::abs(total->values[0] - 1.9375 * L) < 1e-6);
}

TEST_CASE("deep supervision rejects scale mismatches and preserves labels") {
  Rng rng(7);
  LabelPatch t = random_target(1, 8, rng);
  auto l0 = random_tensor<double>({1, 3, 8, 8, 8}, rng);
  auto bad = random_tensor<double>({1, 3, 6, 6, 6}, rng);
  CHECK_THROWS_AS(
      deep_supervision_loss<double>(nullptr, {l0, bad}, t, LossConfig{}),
      ShapeError);

  // downsampled targets only contain labels present in the full target
  LabelPatch down = nearest_downsample(t, 2);
  for (auto l : down.labels) CHECK(l <= 2);
  bool seen[3] = {false, false, false};
  for (auto l : t.labels) seen[l] = true;
  for (auto l : down.labels) CHECK(seen[l]);
}

TEST_CASE("deep supervision gradient reaches every level") {
  Rng rng(8);
  LabelPatch t = random_target(1, 8, rng);
  std::vector<Tensor<float>> preds;
  for (int i = 0; i < 3; ++i)
    preds.push_back(
        random_tensor<float>({1, 3, 8 >> i, 8 >> i, 8 >> i}, rng, true));
  Graph<float> g;
  auto loss = deep_supervision_loss<float>(&g, preds, t, LossConfig{});
  g.backward(loss);
  for (const auto& p : preds) {
    REQUIRE(!p->grad.empty());
    double norm = 0;
    for (float gv : p->grad) norm += std::abs(gv);
    CHECK(norm > 0.0);
  }
}

TEST_SUITE_END();
