#include <doctest.h>

#include <cmath>
#include <set>

#include "hnseg/loss.hpp"
#include "hnseg/segresnet.hpp"
#include "helpers.hpp"

using namespace hnseg;
using testutil::random_tensor;

TEST_SUITE_BEGIN("segresnet");

namespace {

// layer-by-layer count written independently of parameter_plan
std::int64_t counted_by_hand(int in_ch, int out_ch, int f,
                             const std::vector<int>& blocks, int ds) {
  auto conv = [](std::int64_t co, std::int64_t ci, std::int64_t k) {
    return co * ci * k * k * k + co;
  };
  auto bn_trainable = [](std::int64_t c) { return 2 * c; };
  auto block = [&](std::int64_t w) {
    return 2 * conv(w, w, 3) + 2 * bn_trainable(w);
  };
  const int S = int(blocks.size());
  auto width = [&](int s) { return std::int64_t(f) << s; };
  std::int64_t total = conv(width(0), in_ch, 3);  // stem
  for (int s = 0; s < S; ++s) {
    if (s > 0) total += conv(width(s), width(s - 1), 3);  // strided down
    total += blocks[std::size_t(s)] * block(width(s));
  }
  for (int l = S - 2; l >= 0; --l) {
    total += bn_trainable(width(l + 1));
    total += width(l + 1) * width(l) * 8 + width(l);  // transposed conv
    total += block(width(l));
  }
  for (int i = 0; i < ds; ++i) total += conv(out_ch, width(i), 1);
  return total;
}

SegResNetConfig tiny_config() {
  SegResNetConfig cfg;
  cfg.init_filters = 4;
  cfg.blocks_down = {1, 2, 2};
  cfg.ds_levels = 2;
  return cfg;
}

}  // namespace

TEST_CASE("parameter count equals the independent layer-by-layer count") {
  SegResNetConfig cfg = tiny_config();
  CHECK(trainable_parameter_count(cfg) ==
        counted_by_hand(2, 3, 4, {1, 2, 2}, 2));

  SegResNetConfig desk;
  desk.init_filters = 8;
  desk.blocks_down = {1, 2, 2, 4};
  desk.ds_levels = 3;
  CHECK(trainable_parameter_count(desk) ==
        counted_by_hand(2, 3, 8, {1, 2, 2, 4}, 3));

  // built network matches the plan
  Rng rng(1);
  auto net = SegResNet<float>::build(cfg, rng);
  std::int64_t total = 0;
  for (const auto& name : net.param_names())
    if (net.param(name)->requires_grad) total += net.param(name)->numel();
  CHECK(total == trainable_parameter_count(cfg));
}

TEST_CASE("paper config reaches width 1024 at the deepest stage") {
  SegResNetConfig paper;  // defaults are the paper values
  CHECK(paper.blocks_down == std::vector<int>{1, 2, 2, 4, 4, 4});
  CHECK(paper.width(5) == 1024);
  CHECK(paper.ds_levels == 5);
}

TEST_CASE("single-stage config is rejected") {
  SegResNetConfig cfg;
  cfg.blocks_down = {1};
  cfg.ds_levels = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("forward output shapes follow the deep-supervision contract") {
  Rng rng(2);
  auto net = SegResNet<float>::build(tiny_config(), rng);
  auto x = random_tensor<float>({1, 2, 16, 16, 16}, rng);
  auto outs = net.forward(nullptr, x, true);
  REQUIRE(outs.size() == 2);
  CHECK(outs[0]->shape == std::vector<std::int64_t>{1, 3, 16, 16, 16});
  CHECK(outs[1]->shape == std::vector<std::int64_t>{1, 3, 8, 8, 8});

  auto eval_outs = net.forward(nullptr, x, false);
  CHECK(eval_outs.size() == 1);
  CHECK(eval_outs[0]->shape == std::vector<std::int64_t>{1, 3, 16, 16, 16});
}

TEST_CASE("output shape law holds over random configs") {
  Rng rng(3);
  for (int trial = 0; trial < 4; ++trial) {
    SegResNetConfig cfg;
    cfg.init_filters = 2 + int(rng.uniform_int(3));
    const int stages = 2 + int(rng.uniform_int(2));
    cfg.blocks_down.assign(std::size_t(stages), 1);
    for (auto& b : cfg.blocks_down) b = 1 + int(rng.uniform_int(2));
    cfg.ds_levels = 1 + int(rng.uniform_int(std::int64_t(stages - 1)));
    auto net = SegResNet<float>::build(cfg, rng);
    const std::int64_t side = cfg.spatial_divisor() * (1 + rng.uniform_int(2));
    auto x = random_tensor<float>({1, 2, side, side, side}, rng);
    auto outs = net.forward(nullptr, x, true);
    REQUIRE(std::int64_t(outs.size()) == cfg.ds_levels);
    for (int i = 0; i < cfg.ds_levels; ++i) {
      CHECK(outs[std::size_t(i)]->shape[1] == 3);
      CHECK(outs[std::size_t(i)]->shape[2] == side >> i);
      CHECK(outs[std::size_t(i)]->shape[3] == side >> i);
      CHECK(outs[std::size_t(i)]->shape[4] == side >> i);
    }
  }
}

TEST_CASE("indivisible input sizes are rejected") {
  Rng rng(4);
  auto net = SegResNet<float>::build(tiny_config(), rng);
  auto x = random_tensor<float>({1, 2, 10, 10, 10}, rng);  // divisor is 4
  CHECK_THROWS_AS(net.forward(nullptr, x, true), ShapeError);
}

TEST_CASE("all-zero parameters give zero logits and a uniform softmax") {
  Rng rng(5);
  auto net = SegResNet<float>::build(tiny_config(), rng);
  for (const auto& name : net.param_names()) {
    auto& t = net.param(name);
    if (name.find("running_var") != std::string::npos) continue;  // keep 1
    std::fill(t->values.begin(), t->values.end(), 0.0f);
  }
  auto x = random_tensor<float>({1, 2, 8, 8, 8}, rng);
  auto outs = net.forward(nullptr, x, false);
  for (float v : outs[0]->values) CHECK(v == 0.0f);
  auto p = softmax_channels<float>(nullptr, outs[0]);
  for (float v : p->values) CHECK(v == doctest::Approx(1.0f / 3.0f));
}

TEST_CASE("gradient reaches essentially every parameter") {
  // 16^3 keeps the deepest stage at 4^3; smaller inputs leave kernel corner
  // taps with a single valid position, where a relu-dead activation yields an
  // honestly zero weight gradient
  Rng rng(6);
  auto net = SegResNet<float>::build(tiny_config(), rng);
  auto x = random_tensor<float>({1, 2, 16, 16, 16}, rng);
  LabelPatch t;
  t.shape = {1, 16, 16, 16};
  t.labels.assign(4096, 0);
  for (int i = 0; i < 800; ++i) t.labels[std::size_t(i)] = 1;
  for (int i = 800; i < 1400; ++i) t.labels[std::size_t(i)] = 2;
  Graph<float> g;
  auto outs = net.forward(&g, x, true);
  auto loss = deep_supervision_loss<float>(&g, outs, t, LossConfig{});
  g.backward(loss);

  std::int64_t zero = 0, total = 0;
  for (const auto& p : net.trainable_params()) {
    REQUIRE(!p->grad.empty());
    for (float gv : p->grad) {
      ++total;
      if (gv == 0.0f) ++zero;
    }
  }
  CHECK(double(zero) / double(total) < 0.01);
}

TEST_CASE("eval forward is deterministic") {
  Rng rng(7);
  auto net = SegResNet<float>::build(tiny_config(), rng);
  auto x = random_tensor<float>({1, 2, 8, 8, 8}, rng);
  auto a = net.forward(nullptr, x, false);
  auto b = net.forward(nullptr, x, false);
  CHECK(a[0]->values == b[0]->values);
}

TEST_CASE("translation by the total stride shifts the argmax map") {
  // two-stage config: total stride 2; shifting the input by 2 voxels shifts
  // the interior argmax map by 2 voxels up to border effects
  SegResNetConfig cfg;
  cfg.init_filters = 4;
  cfg.blocks_down = {1, 1};
  cfg.ds_levels = 1;
  Rng rng(8);
  auto net = SegResNet<float>::build(cfg, rng);

  const std::int64_t side = 24, shift = 2;
  auto base = make_tensor<float>({1, 2, side, side, side});
  std::fill(base->values.begin(), base->values.end(), 0.5f);
  auto blobs = [&](Tensor<float>& t, std::int64_t dz) {
    for (std::int64_t z = 0; z < side; ++z)
      for (std::int64_t y = 0; y < side; ++y)
        for (std::int64_t x = 0; x < side; ++x) {
          const double r2 = double((z - 10 - dz) * (z - 10 - dz) +
                                   (y - 12) * (y - 12) + (x - 12) * (x - 12));
          const float v = float(0.5 + 0.4 * std::exp(-r2 / 18.0));
          t->values[std::size_t((z * side + y) * side + x)] = v;
          t->values[std::size_t(((side + z) * side + y) * side + x)] = v;
        }
  };
  auto shifted = make_tensor<float>({1, 2, side, side, side});
  std::fill(shifted->values.begin(), shifted->values.end(), 0.5f);
  blobs(base, 0);
  blobs(shifted, shift);

  auto out_a = net.forward(nullptr, base, false)[0];
  auto out_b = net.forward(nullptr, shifted, false)[0];
  auto argmax_at = [&](const Tensor<float>& t, std::int64_t z, std::int64_t y,
                       std::int64_t x) {
    int best = 0;
    float bv = t->values[std::size_t((z * side + y) * side + x)];
    for (int c = 1; c < 3; ++c) {
      const float v =
          t->values[std::size_t(((c * side + z) * side + y) * side + x)];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    return best;
  };
  std::int64_t mismatch = 0, checked = 0;
  const std::int64_t margin = 6;
  for (std::int64_t z = margin; z < side - margin - shift; ++z)
    for (std::int64_t y = margin; y < side - margin; ++y)
      for (std::int64_t x = margin; x < side - margin; ++x) {
        ++checked;
        if (argmax_at(out_a, z, y, x) != argmax_at(out_b, z + shift, y, x))
          ++mismatch;
      }
  CHECK(double(mismatch) / double(checked) < 0.05);
}

TEST_SUITE_END();
