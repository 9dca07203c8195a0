#pragma once

// Shared test utilities: random tensors, a central finite-difference gradient
// checker, and tiny in-memory case builders.

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "hnseg/autodiff.hpp"
#include "hnseg/preprocess.hpp"
#include "hnseg/rng.hpp"

namespace testutil {

using namespace hnseg;

template <typename T>
Tensor<T> random_tensor(std::vector<std::int64_t> shape, Rng& rng,
                        bool requires_grad = false, double lo = -1.0,
                        double hi = 1.0) {
  auto t = make_tensor<T>(std::move(shape), requires_grad);
  for (auto& v : t->values) v = T(rng.uniform(lo, hi));
  return t;
}

// Nudges values away from zero so relu kinks cannot sit inside the finite
// difference stencil.
template <typename T>
void kink_guard(const Tensor<T>& t, T margin) {
  for (auto& v : t->values)
    if (std::abs(v) < margin) v = v < T(0) ? -margin : margin;
}

// loss(x) = sum_i weights_i * f(x)_i with fixed random weights; checks
// d loss / d leaf against central differences for every element of `leaf`.
// Returns the max relative error.
template <typename T>
double fd_check(const std::function<Tensor<T>(Graph<T>*)>& forward,
                const Tensor<T>& leaf, Rng& rng) {
  const T h = std::is_same_v<T, double> ? T(1e-5) : T(2e-2);

  // fixed projection weights make the output scalar
  std::vector<T> proj;
  {
    Graph<T> g;
    auto out = forward(&g);
    proj.resize(out->values.size());
    for (auto& w : proj) w = T(rng.uniform(-1.0, 1.0));
  }
  auto project = [&](const Tensor<T>& out) {
    T s = T(0);
    for (std::size_t i = 0; i < out->values.size(); ++i)
      s += proj[i] * out->values[i];
    return s;
  };

  // analytic gradient via loss = sum(out * proj) on the tape
  leaf->grad.clear();
  {
    Graph<T> g;
    auto out = forward(&g);
    auto pw = make_tensor<T>(out->shape, std::vector<T>(proj));
    auto loss = sum(&g, mul(&g, out, pw));
    g.backward(loss);
  }
  std::vector<T> analytic = leaf->grad;
  if (analytic.empty()) analytic.assign(leaf->values.size(), T(0));

  // the scale floor absorbs finite-difference noise (~eps*|f|/h) on
  // near-zero gradient entries
  const double floor = std::is_same_v<T, double> ? 1e-3 : 1e-2;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < leaf->values.size(); ++i) {
    const T saved = leaf->values[i];
    leaf->values[i] = saved + h;
    T fp;
    {
      Graph<T> g;
      fp = project(forward(&g));
    }
    leaf->values[i] = saved - h;
    T fm;
    {
      Graph<T> g;
      fm = project(forward(&g));
    }
    leaf->values[i] = saved;
    const double fd = (double(fp) - double(fm)) / (2.0 * double(h));
    const double an = double(analytic[i]);
    const double scale = std::max({std::abs(fd), std::abs(an), floor});
    max_rel = std::max(max_rel, std::abs(fd - an) / scale);
  }
  return max_rel;
}

inline std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("hnseg_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Small in-memory preprocessed case: constant-ish channels, one class-1 blob
// and one class-2 blob at known locations.
inline PreprocessedCase tiny_case(std::int64_t nx, std::int64_t ny,
                                  std::int64_t nz, bool with_tumor = true,
                                  bool with_node = true) {
  ImageGeometry g;
  g.size = {nx, ny, nz};
  PreprocessedCase pc;
  pc.ct = ScalarVolume(g, 0.4f);
  pc.pet = ScalarVolume(g, 0.5f);
  pc.label = LabelVolume(g, 0);
  pc.has_label = true;
  auto blob = [&](std::int64_t cx, std::int64_t cy, std::int64_t cz,
                  std::int64_t r, std::uint8_t cls) {
    for (std::int64_t z = std::max<std::int64_t>(0, cz - r);
         z <= std::min(nz - 1, cz + r); ++z)
      for (std::int64_t y = std::max<std::int64_t>(0, cy - r);
           y <= std::min(ny - 1, cy + r); ++y)
        for (std::int64_t x = std::max<std::int64_t>(0, cx - r);
             x <= std::min(nx - 1, cx + r); ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz) <=
              r * r) {
            pc.label.at(x, y, z) = cls;
            pc.pet.at(x, y, z) = 0.9f;
          }
  };
  if (with_tumor) blob(nx / 3, ny / 3, nz / 2, 2, 1);
  if (with_node) blob(2 * nx / 3, 2 * ny / 3, nz / 2, 2, 2);
  pc.sidecar.case_id = "tiny";
  pc.sidecar.original_ct = g;
  pc.sidecar.frame = g;
  pc.sidecar.crop_box = {{0, 0, 0}, {nx, ny, nz}};
  pc.sidecar.pet_mean = 0.3;
  pc.sidecar.pet_std = 0.5;
  pc.sidecar.ct_low = -200;
  pc.sidecar.ct_high = 300;
  pc.sidecar.ct_logit_span = 4.0;
  return pc;
}

}  // namespace testutil
