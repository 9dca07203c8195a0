// Throughput comparison of the production OpenMP kernels against the serial
// reference implementations, at the workstation-scale shapes the trainer uses.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "hnseg/autodiff.hpp"
#include "hnseg/exec.hpp"
#include "hnseg/reference_kernels.hpp"
#include "hnseg/rng.hpp"
#include "hnseg/volume.hpp"

using namespace hnseg;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

Tensor<float> random_tensor(std::vector<std::int64_t> shape, Rng& rng,
                            bool grad = false) {
  auto t = make_tensor<float>(std::move(shape), grad);
  for (auto& v : t->values) v = float(rng.uniform(-1.0, 1.0));
  return t;
}

void row(const char* name, double serial_ms, double omp_ms) {
  std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name, serial_ms, omp_ms,
              serial_ms / omp_ms);
}

}  // namespace

int main() {
  Rng rng(42);
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  // conv3d forward, the trainer's stage-0 shape
  {
    const std::int64_t xs[5] = {1, 8, 32, 32, 32};
    auto x = random_tensor({1, 8, 32, 32, 32}, rng);
    auto w = random_tensor({8, 8, 3, 3, 3}, rng);
    auto b = random_tensor({8}, rng);
    std::int64_t ys[5];
    const double serial = time_ms(
        [&] {
          reference::conv3d_forward(x->values, xs, w->values, b->values, 3, 1,
                                    1, ys);
        },
        3);
    exec::set_parallel(true);
    const double omp = time_ms([&] { conv3d<float>(nullptr, x, w, b, 1, 1); }, 3);
    row("conv3d fwd 8ch 32^3", serial, omp);
  }

  // conv3d forward+backward through the tape
  {
    auto x = random_tensor({1, 8, 32, 32, 32}, rng, true);
    auto w = random_tensor({8, 8, 3, 3, 3}, rng, true);
    auto b = random_tensor({8}, rng, true);
    auto run = [&] {
      Graph<float> g;
      auto y = conv3d(&g, x, w, b, 1, 1);
      auto loss = sum(&g, y);
      g.backward(loss);
      x->grad.clear();
      w->grad.clear();
      b->grad.clear();
    };
    exec::set_parallel(false);
    const double serial = time_ms(run, 3);
    exec::set_parallel(true);
    const double omp = time_ms(run, 3);
    row("conv3d fwd+bwd 8ch 32^3", serial, omp);
  }

  // transposed conv
  {
    auto x = random_tensor({1, 16, 16, 16, 16}, rng, true);
    auto w = random_tensor({16, 8, 2, 2, 2}, rng, true);
    auto b = random_tensor({8}, rng, true);
    auto run = [&] {
      Graph<float> g;
      auto y = conv_transpose3d(&g, x, w, b);
      auto loss = sum(&g, y);
      g.backward(loss);
      x->grad.clear();
      w->grad.clear();
      b->grad.clear();
    };
    exec::set_parallel(false);
    const double serial = time_ms(run, 3);
    exec::set_parallel(true);
    const double omp = time_ms(run, 3);
    row("conv_transpose3d 16->8ch", serial, omp);
  }

  // batch norm forward+backward
  {
    auto x = random_tensor({1, 16, 32, 32, 32}, rng, true);
    auto gamma = random_tensor({16}, rng, true);
    auto beta = random_tensor({16}, rng, true);
    auto rm = make_tensor<float>({16});
    auto rv = make_tensor<float>({16});
    auto run = [&] {
      Graph<float> g;
      auto y = batch_norm3d(&g, x, gamma, beta, rm, rv, true);
      auto loss = sum(&g, y);
      g.backward(loss);
      x->grad.clear();
      gamma->grad.clear();
      beta->grad.clear();
    };
    exec::set_parallel(false);
    const double serial = time_ms(run, 5);
    exec::set_parallel(true);
    const double omp = time_ms(run, 5);
    row("batch_norm3d 16ch 32^3", serial, omp);
  }

  // trilinear resample, PET-to-frame shape
  {
    ImageGeometry src;
    src.size = {64, 64, 64};
    src.spacing = {3, 3, 3};
    src.origin = {1.5, 1.5, 1.5};
    ScalarVolume v(src);
    for (auto& val : v.values) val = float(rng.uniform(0.0, 2.0));
    ImageGeometry dst = resampled_geometry(src, {1, 1, 1});
    const double serial = time_ms([&] { reference::resample_linear(v, dst); }, 3);
    exec::set_parallel(true);
    const double omp = time_ms([&] { resample_linear(v, dst); }, 3);
    row("resample_linear 3mm->1mm", serial, omp);
  }

  std::printf("\nthreads: OpenMP default; set OMP_NUM_THREADS to vary.\n");
  return 0;
}
