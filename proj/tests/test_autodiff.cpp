#include <doctest.h>

#include <cmath>

#include "hnseg/autodiff.hpp"
#include "hnseg/exec.hpp"
#include "hnseg/optim.hpp"
#include "helpers.hpp"

using namespace hnseg;
using testutil::fd_check;
using testutil::kink_guard;
using testutil::random_tensor;

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("conv3d with a 1x1x1 identity kernel is the identity") {
  Rng rng(1);
  auto x = random_tensor<float>({1, 1, 3, 3, 3}, rng);
  auto w = make_tensor<float>({1, 1, 1, 1, 1}, std::vector<float>{1.0f});
  auto b = make_tensor<float>({1});
  auto y = conv3d<float>(nullptr, x, w, b, 1, 0);
  CHECK(y->values == x->values);
}

TEST_CASE("all-ones 3x3x3 kernel on constant input sums the window") {
  auto x = make_tensor<float>({1, 1, 5, 5, 5});
  std::fill(x->values.begin(), x->values.end(), 2.0f);
  auto w = make_tensor<float>({1, 1, 3, 3, 3});
  std::fill(w->values.begin(), w->values.end(), 1.0f);
  auto b = make_tensor<float>({1});
  auto y = conv3d<float>(nullptr, x, w, b, 1, 1);
  // interior voxels: 27 * 2
  CHECK(y->values[std::size_t((2 * 5 + 2) * 5 + 2)] == doctest::Approx(54.0f));
  // corner: only 8 taps in range
  CHECK(y->values[0] == doctest::Approx(16.0f));
}

TEST_CASE("conv3d stride-1 padding-k/2 preserves shape; stride-2 then transpose restores it") {
  Rng rng(2);
  auto x = random_tensor<float>({1, 2, 8, 8, 8}, rng);
  auto w = random_tensor<float>({3, 2, 3, 3, 3}, rng);
  auto b = random_tensor<float>({3}, rng);
  auto y = conv3d<float>(nullptr, x, w, b, 1, 1);
  CHECK(y->shape == std::vector<std::int64_t>{1, 3, 8, 8, 8});

  auto w2 = random_tensor<float>({4, 3, 3, 3, 3}, rng);
  auto b2 = random_tensor<float>({4}, rng);
  auto down = conv3d<float>(nullptr, y, w2, b2, 2, 1);
  CHECK(down->shape == std::vector<std::int64_t>{1, 4, 4, 4, 4});
  auto wt = random_tensor<float>({4, 2, 2, 2, 2}, rng);
  auto bt = random_tensor<float>({2}, rng);
  auto up = conv_transpose3d<float>(nullptr, down, wt, bt);
  CHECK(up->shape == std::vector<std::int64_t>{1, 2, 8, 8, 8});
}

TEST_CASE("conv_transpose3d spreads a single voxel into a 2x2x2 block") {
  auto x = make_tensor<float>({1, 1, 2, 2, 2});
  x->values[0] = 3.0f;  // voxel (0,0,0)
  auto w = make_tensor<float>({1, 1, 2, 2, 2});
  std::fill(w->values.begin(), w->values.end(), 1.0f);
  auto b = make_tensor<float>({1});
  auto y = conv_transpose3d<float>(nullptr, x, w, b);
  CHECK(y->shape == std::vector<std::int64_t>{1, 1, 4, 4, 4});
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t yy = 0; yy < 4; ++yy)
      for (std::int64_t xx = 0; xx < 4; ++xx) {
        const float expect = (z < 2 && yy < 2 && xx < 2) ? 3.0f : 0.0f;
        CHECK(y->values[std::size_t((z * 4 + yy) * 4 + xx)] == expect);
      }
}

TEST_CASE("conv_transpose3d output shape contract") {
  Rng rng(3);
  auto x = random_tensor<float>({1, 6, 4, 4, 4}, rng);
  auto w = random_tensor<float>({6, 3, 2, 2, 2}, rng);
  auto b = random_tensor<float>({3}, rng);
  CHECK(conv_transpose3d<float>(nullptr, x, w, b)->shape ==
        std::vector<std::int64_t>{1, 3, 8, 8, 8});
}

TEST_CASE("batch norm train-mode statistics") {
  Rng rng(4);
  auto x = random_tensor<float>({2, 3, 4, 4, 4}, rng, false, -5.0, 5.0);
  auto gamma = make_tensor<float>({3});
  std::fill(gamma->values.begin(), gamma->values.end(), 1.0f);
  auto beta = make_tensor<float>({3});
  auto rm = make_tensor<float>({3});
  auto rv = make_tensor<float>({3});
  std::fill(rv->values.begin(), rv->values.end(), 1.0f);
  auto y = batch_norm3d<float>(nullptr, x, gamma, beta, rm, rv, true);
  const std::int64_t plane = 64, C = 3, N = 2;
  for (std::int64_t c = 0; c < C; ++c) {
    double mean = 0, var = 0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < plane; ++i)
        mean += y->values[std::size_t((n * C + c) * plane + i)];
    mean /= double(N * plane);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = y->values[std::size_t((n * C + c) * plane + i)] - mean;
        var += d * d;
      }
    var /= double(N * plane);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batch norm eval mode with unit running stats is the identity") {
  Rng rng(5);
  auto x = random_tensor<float>({1, 2, 3, 3, 3}, rng);
  auto gamma = make_tensor<float>({2});
  std::fill(gamma->values.begin(), gamma->values.end(), 1.0f);
  auto beta = make_tensor<float>({2});
  auto rm = make_tensor<float>({2});
  auto rv = make_tensor<float>({2});
  std::fill(rv->values.begin(), rv->values.end(), 1.0f);
  auto y = batch_norm3d<float>(nullptr, x, gamma, beta, rm, rv, false);
  for (std::size_t i = 0; i < x->values.size(); ++i)
    CHECK(y->values[i] == doctest::Approx(x->values[i]).epsilon(1e-4));
}

TEST_CASE("softmax of equal logits is uniform; add of zero is identity") {
  auto x = make_tensor<float>({1, 3, 2, 2, 2});
  std::fill(x->values.begin(), x->values.end(), 0.7f);
  auto p = softmax_channels<float>(nullptr, x);
  for (float v : p->values) CHECK(v == doctest::Approx(1.0f / 3.0f));

  Rng rng(6);
  auto a = random_tensor<float>({1, 1, 2, 2, 2}, rng);
  auto z = make_tensor<float>({1, 1, 2, 2, 2});
  CHECK(add<float>(nullptr, a, z)->values == a->values);
}

TEST_CASE("softmax channel sums are 1 everywhere") {
  Rng rng(7);
  auto x = random_tensor<float>({2, 3, 3, 3, 3}, rng, false, -30.0, 30.0);
  auto p = softmax_channels<float>(nullptr, x);
  const std::int64_t V = 27;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t v = 0; v < V; ++v) {
      double s = 0;
      for (std::int64_t c = 0; c < 3; ++c)
        s += p->values[std::size_t((n * 3 + c) * V + v)];
      CHECK(std::abs(s - 1.0) < 1e-6);
      for (std::int64_t c = 0; c < 3; ++c)
        CHECK(p->values[std::size_t((n * 3 + c) * V + v)] >= 0.0f);
    }
}

TEST_CASE("nearest_downsample picks even indices of a ramp") {
  auto x = make_tensor<float>({1, 1, 8, 8, 8});
  for (std::int64_t i = 0; i < 512; ++i) x->values[std::size_t(i)] = float(i);
  auto y = nearest_downsample<float>(nullptr, x, 2);
  CHECK(y->shape == std::vector<std::int64_t>{1, 1, 4, 4, 4});
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t yy = 0; yy < 4; ++yy)
      for (std::int64_t xx = 0; xx < 4; ++xx)
        CHECK(y->values[std::size_t((z * 4 + yy) * 4 + xx)] ==
              float(((2 * z) * 8 + 2 * yy) * 8 + 2 * xx));
}

TEST_CASE("backward of sum gives ones; quadratic gives x") {
  Rng rng(8);
  auto x = random_tensor<float>({1, 1, 3, 3, 3}, rng, true);
  {
    Graph<float> g;
    auto loss = sum(&g, x);
    g.backward(loss);
    for (float v : x->grad) CHECK(v == 1.0f);
  }
  x->grad.clear();
  {
    Graph<float> g;
    auto sq = mul(&g, x, x);
    auto half = scale(&g, sq, 0.5f);
    auto loss = sum(&g, half);
    g.backward(loss);
    for (std::size_t i = 0; i < x->values.size(); ++i)
      CHECK(x->grad[i] == doctest::Approx(x->values[i]));
  }
}

TEST_CASE("backward on a consumed graph and non-scalar roots are errors") {
  Rng rng(9);
  auto x = random_tensor<float>({1, 1, 2, 2, 2}, rng, true);
  Graph<float> g;
  auto y = relu(&g, x);
  auto loss = sum(&g, y);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), StateError);

  Graph<float> g2;
  auto y2 = relu(&g2, x);
  CHECK_THROWS_AS(g2.backward(y2), ArgumentError);
}

TEST_CASE("backward is deterministic and mode-independent") {
  Rng rng(10);
  auto run = [&](bool parallel) {
    exec::set_parallel(parallel);
    Rng local(42);
    auto x = random_tensor<float>({1, 2, 6, 6, 6}, local, true);
    auto w = random_tensor<float>({3, 2, 3, 3, 3}, local, true);
    auto b = random_tensor<float>({3}, local, true);
    Graph<float> g;
    auto y = conv3d(&g, x, w, b, 1, 1);
    auto loss = sum(&g, y);
    g.backward(loss);
    return std::tuple{x->grad, w->grad, b->grad};
  };
  const auto a = run(false);
  const auto b1 = run(false);
  const auto c = run(true);
  CHECK(std::get<0>(a) == std::get<0>(b1));
  CHECK(std::get<0>(a) == std::get<0>(c));
  CHECK(std::get<1>(a) == std::get<1>(c));
  CHECK(std::get<2>(a) == std::get<2>(c));
  exec::set_parallel(true);
}

// finite-difference oracles -------------------------------------------------

TEST_CASE_TEMPLATE("conv3d gradients match finite differences", T, float, double) {
  const double tol = std::is_same_v<T, double> ? 1e-4 : 1e-2;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    auto x = random_tensor<T>({1, 2, 5, 5, 5}, rng, true);
    auto w = random_tensor<T>({2, 2, 3, 3, 3}, rng, true);
    auto b = random_tensor<T>({2}, rng, true);
    auto fwd = [&](Graph<T>* g) { return conv3d(g, x, w, b, 1, 1); };
    CHECK(fd_check<T>(fwd, x, rng) < tol);
    CHECK(fd_check<T>(fwd, w, rng) < tol);
    CHECK(fd_check<T>(fwd, b, rng) < tol);
  }
}

TEST_CASE_TEMPLATE("strided conv3d gradients match finite differences", T, float,
                   double) {
  const double tol = std::is_same_v<T, double> ? 1e-4 : 1e-2;
  Rng rng(200);
  auto x = random_tensor<T>({1, 2, 6, 6, 6}, rng, true);
  auto w = random_tensor<T>({3, 2, 3, 3, 3}, rng, true);
  auto b = random_tensor<T>({3}, rng, true);
  auto fwd = [&](Graph<T>* g) { return conv3d(g, x, w, b, 2, 1); };
  CHECK(fd_check<T>(fwd, x, rng) < tol);
  CHECK(fd_check<T>(fwd, w, rng) < tol);
}

TEST_CASE_TEMPLATE("conv_transpose3d gradients match finite differences", T,
                   float, double) {
  const double tol = std::is_same_v<T, double> ? 1e-4 : 1e-2;
  Rng rng(300);
  auto x = random_tensor<T>({1, 3, 3, 3, 3}, rng, true);
  auto w = random_tensor<T>({3, 2, 2, 2, 2}, rng, true);
  auto b = random_tensor<T>({2}, rng, true);
  auto fwd = [&](Graph<T>* g) { return conv_transpose3d(g, x, w, b); };
  CHECK(fd_check<T>(fwd, x, rng) < tol);
  CHECK(fd_check<T>(fwd, w, rng) < tol);
  CHECK(fd_check<T>(fwd, b, rng) < tol);
}

TEST_CASE_TEMPLATE("batch norm gradients match finite differences", T, float,
                   double) {
  const double tol = std::is_same_v<T, double> ? 1e-4 : 1e-2;
  Rng rng(400);
  auto x = random_tensor<T>({1, 2, 3, 3, 3}, rng, true);
  auto gamma = random_tensor<T>({2}, rng, true, 0.5, 1.5);
  auto beta = random_tensor<T>({2}, rng, true);
  auto rm = make_tensor<T>({2});
  auto rv = make_tensor<T>({2});
  std::fill(rv->values.begin(), rv->values.end(), T(1));
  auto fwd = [&](Graph<T>* g) {
    // reset running stats so repeated forwards see identical state
    std::fill(rm->values.begin(), rm->values.end(), T(0));
    std::fill(rv->values.begin(), rv->values.end(), T(1));
    return batch_norm3d(g, x, gamma, beta, rm, rv, true);
  };
  CHECK(fd_check<T>(fwd, x, rng) < tol);
  CHECK(fd_check<T>(fwd, gamma, rng) < tol);
  CHECK(fd_check<T>(fwd, beta, rng) < tol);
}

TEST_CASE_TEMPLATE("elementwise op gradients match finite differences", T, float,
                   double) {
  const double tol = std::is_same_v<T, double> ? 1e-4 : 1e-2;
  Rng rng(500);
  auto x = random_tensor<T>({1, 2, 4, 4, 4}, rng, true);
  kink_guard(x, T(0.05));
  auto fwd_relu = [&](Graph<T>* g) { return relu(g, x); };
  CHECK(fd_check<T>(fwd_relu, x, rng) < tol);

  auto y = random_tensor<T>({1, 2, 4, 4, 4}, rng, true);
  auto fwd_add = [&](Graph<T>* g) { return add(g, x, y); };
  CHECK(fd_check<T>(fwd_add, y, rng) < tol);
  auto fwd_mul = [&](Graph<T>* g) { return mul(g, x, y); };
  CHECK(fd_check<T>(fwd_mul, y, rng) < tol);
  auto fwd_scale = [&](Graph<T>* g) { return scale(g, x, T(1.7)); };
  CHECK(fd_check<T>(fwd_scale, x, rng) < tol);
  auto fwd_soft = [&](Graph<T>* g) { return softmax_channels(g, x); };
  CHECK(fd_check<T>(fwd_soft, x, rng) < tol);
  auto fwd_nd = [&](Graph<T>* g) { return nearest_downsample(g, x, 2); };
  CHECK(fd_check<T>(fwd_nd, x, rng) < tol);
}

// optimizer ------------------------------------------------------------------

TEST_CASE("adamw: zero grads and zero weight decay leave parameters unchanged") {
  Rng rng(600);
  auto p = random_tensor<float>({8}, rng, true);
  const std::vector<float> before = p->values;
  p->ensure_grad();
  AdamW<float> opt({p}, 0.0f);
  opt.step(1e-3f);
  CHECK(p->values == before);
}

TEST_CASE("adamw single-step closed form") {
  Rng rng(601);
  auto p = random_tensor<float>({16}, rng, true);
  const std::vector<float> before = p->values;
  p->ensure_grad();
  for (std::size_t i = 0; i < p->grad.size(); ++i)
    p->grad[i] = float(rng.uniform(-2.0, 2.0));
  const float lr = 1e-2f, eps = 1e-8f;
  AdamW<float> opt({p}, 0.0f, 0.9f, 0.999f, eps);
  opt.step(lr);
  for (std::size_t i = 0; i < p->values.size(); ++i) {
    const float gval = p->grad[i];
    const float expect = before[i] - lr * gval / (std::abs(gval) + eps);
    CHECK(p->values[i] == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("adamw decoupled decay shrinks parameters with zero grads") {
  Rng rng(602);
  auto p = random_tensor<float>({8}, rng, true);
  const std::vector<float> before = p->values;
  p->ensure_grad();
  const float lr = 0.5f, wd = 1e-5f;
  AdamW<float> opt({p}, wd);
  opt.step(lr);
  for (std::size_t i = 0; i < p->values.size(); ++i)
    CHECK(p->values[i] == doctest::Approx(before[i] * (1.0f - lr * wd)));
}

TEST_CASE("adamw with lr 0 is bit-identical; missing grads raise") {
  Rng rng(603);
  auto p = random_tensor<float>({8}, rng, true);
  const std::vector<float> before = p->values;
  p->ensure_grad();
  for (auto& gv : p->grad) gv = 0.33f;
  AdamW<float> opt({p}, 1e-5f);
  opt.step(0.0f);
  CHECK(p->values == before);

  auto q = random_tensor<float>({4}, rng, true);
  AdamW<float> opt2({q}, 0.0f);
  CHECK_THROWS_AS(opt2.step(1e-3f), StateError);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 300, 2e-4) == doctest::Approx(2e-4));
  CHECK(cosine_lr(300, 300, 2e-4) == doctest::Approx(0.0));
  CHECK(cosine_lr(150, 300, 2e-4) == doctest::Approx(1e-4));
  CHECK_THROWS_AS(cosine_lr(-1, 10, 1.0), ArgumentError);
  CHECK_THROWS_AS(cosine_lr(11, 10, 1.0), ArgumentError);
}

TEST_SUITE_END();
