#include "hnseg/inference.hpp"

#include <cmath>

#include "hnseg/exec.hpp"

namespace hnseg {

namespace {

std::vector<std::int64_t> window_starts(std::int64_t dim, std::int64_t roi,
                                        std::int64_t stride) {
  std::vector<std::int64_t> starts;
  if (dim <= roi) return {0};
  for (std::int64_t p = 0;; p += stride) {
    if (p + roi >= dim) {
      starts.push_back(dim - roi);
      break;
    }
    starts.push_back(p);
  }
  return starts;
}

std::vector<double> gaussian_profile(std::int64_t roi) {
  std::vector<double> w(static_cast<std::size_t>(roi));
  const double center = (double(roi) - 1.0) / 2.0;
  const double sigma = 0.125 * double(roi);
  for (std::int64_t i = 0; i < roi; ++i) {
    const double d = (double(i) - center) / sigma;
    w[std::size_t(i)] = std::exp(-0.5 * d * d);
  }
  return w;
}

}  // namespace

ProbabilityMap sliding_window(const Predictor& model, const Tensor<float>& input,
                              const ImageGeometry& geom,
                              const InferenceConfig& cfg,
                              std::array<float, 2> pad_fill) {
  if (!input || input->shape.size() != 5 || input->shape[0] != 1 ||
      input->shape[1] != 2)
    throw ShapeError("sliding_window: input must be [1,2,D,H,W]");
  if (cfg.overlap < 0.0 || cfg.overlap >= 1.0)
    throw ArgumentError("sliding_window: overlap must be in [0,1)");
  const std::int64_t D = input->shape[2], H = input->shape[3], W = input->shape[4];
  const std::int64_t r = cfg.roi_size;

  // pad up to the roi if the volume is smaller
  const std::int64_t Dp = std::max(D, r), Hp = std::max(H, r), Wp = std::max(W, r);
  Tensor<float> work = input;
  if (Dp != D || Hp != H || Wp != W) {
    work = make_tensor<float>({1, 2, Dp, Hp, Wp});
    for (int c = 0; c < 2; ++c) {
      float* dst = work->values.data() + c * Dp * Hp * Wp;
      std::fill(dst, dst + Dp * Hp * Wp, pad_fill[std::size_t(c)]);
      const float* src = input->values.data() + c * D * H * W;
      for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
          std::copy(src + (z * H + y) * W, src + (z * H + y) * W + W,
                    dst + (z * Hp + y) * Wp);
    }
  }

  const std::int64_t stride =
      std::max<std::int64_t>(1, std::llround(double(r) * (1.0 - cfg.overlap)));
  const auto zs = window_starts(Dp, r, stride);
  const auto ys = window_starts(Hp, r, stride);
  const auto xs = window_starts(Wp, r, stride);
  const auto prof = gaussian_profile(r);

  std::vector<double> acc(std::size_t(3 * Dp * Hp * Wp), 0.0);
  std::vector<double> wsum(std::size_t(Dp * Hp * Wp), 0.0);

  auto window = make_tensor<float>({1, 2, r, r, r});
  for (const std::int64_t z0 : zs)
    for (const std::int64_t y0 : ys)
      for (const std::int64_t x0 : xs) {
        for (int c = 0; c < 2; ++c) {
          const float* src = work->values.data() + c * Dp * Hp * Wp;
          float* dst = window->values.data() + c * r * r * r;
          for (std::int64_t z = 0; z < r; ++z)
            for (std::int64_t y = 0; y < r; ++y)
              std::copy(src + ((z0 + z) * Hp + y0 + y) * Wp + x0,
                        src + ((z0 + z) * Hp + y0 + y) * Wp + x0 + r,
                        dst + (z * r + y) * r);
        }
        const Tensor<float> probs = model(window);
        if (!probs || probs->shape.size() != 5 || probs->shape[1] != 3 ||
            probs->shape[2] != r || probs->shape[3] != r || probs->shape[4] != r)
          throw ShapeError("sliding_window: model must return [1,3,r,r,r]");
        const float* pp = probs->values.data();
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
        for (std::int64_t z = 0; z < r; ++z)
          for (std::int64_t y = 0; y < r; ++y) {
            const double wzy = prof[std::size_t(z)] * prof[std::size_t(y)];
            for (std::int64_t x = 0; x < r; ++x) {
              const double w = wzy * prof[std::size_t(x)];
              const std::int64_t g = ((z0 + z) * Hp + y0 + y) * Wp + x0 + x;
              wsum[std::size_t(g)] += w;
              for (int c = 0; c < 3; ++c)
                acc[std::size_t(c * Dp * Hp * Wp + g)] +=
                    w * double(pp[(c * r + z) * r * r + y * r + x]);
            }
          }
      }

  ProbabilityMap out;
  out.geom = geom;
  out.probs.resize(std::size_t(3 * D * H * W));
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t z = 0; z < D; ++z)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const std::int64_t gp = (z * Hp + y) * Wp + x;
        const std::int64_t go = (z * H + y) * W + x;
        const double ws = wsum[std::size_t(gp)];
        for (int c = 0; c < 3; ++c)
          out.probs[std::size_t(c * D * H * W + go)] =
              float(acc[std::size_t(c * Dp * Hp * Wp + gp)] / ws);
      }
  return out;
}

std::vector<std::array<bool, 3>> tta_flip_set() {
  return {{false, false, false}, {true, false, false}, {false, true, false},
          {false, false, true},  {true, true, false},  {true, false, true},
          {false, true, true},   {true, true, true}};
}

namespace {

template <typename T>
void flip_block(const T* src, T* dst, std::int64_t D, std::int64_t H,
                std::int64_t W, bool fx, bool fy, bool fz) {
  for (std::int64_t z = 0; z < D; ++z) {
    const std::int64_t sz = fz ? D - 1 - z : z;
    for (std::int64_t y = 0; y < H; ++y) {
      const std::int64_t sy = fy ? H - 1 - y : y;
      const T* srow = src + (sz * H + sy) * W;
      T* drow = dst + (z * H + y) * W;
      if (fx)
        for (std::int64_t x = 0; x < W; ++x) drow[x] = srow[W - 1 - x];
      else
        std::copy(srow, srow + W, drow);
    }
  }
}

}  // namespace

Tensor<float> flip_tensor(const Tensor<float>& t, bool flip_x, bool flip_y,
                          bool flip_z) {
  if (!t || t->shape.size() != 5) throw ShapeError("flip_tensor: need 5-d tensor");
  auto out = make_tensor<float>(t->shape);
  const std::int64_t NC = t->shape[0] * t->shape[1];
  const std::int64_t D = t->shape[2], H = t->shape[3], W = t->shape[4];
  for (std::int64_t c = 0; c < NC; ++c)
    flip_block(t->values.data() + c * D * H * W,
               out->values.data() + c * D * H * W, D, H, W, flip_x, flip_y,
               flip_z);
  return out;
}

ProbabilityMap flip_map(const ProbabilityMap& m, bool flip_x, bool flip_y,
                        bool flip_z) {
  ProbabilityMap out;
  out.geom = m.geom;
  out.probs.resize(m.probs.size());
  const std::int64_t D = m.geom.size.z, H = m.geom.size.y, W = m.geom.size.x;
  for (int c = 0; c < 3; ++c)
    flip_block(m.probs.data() + std::size_t(c) * std::size_t(D * H * W),
               out.probs.data() + std::size_t(c) * std::size_t(D * H * W), D, H,
               W, flip_x, flip_y, flip_z);
  return out;
}

ProbabilityMap tta_predict(const Predictor& model, const Tensor<float>& input,
                           const ImageGeometry& geom, const InferenceConfig& cfg,
                           std::array<float, 2> pad_fill) {
  const auto flips = tta_flip_set();
  std::vector<double> acc;
  ProbabilityMap out;
  for (const auto& f : flips) {
    const Tensor<float> flipped = flip_tensor(input, f[0], f[1], f[2]);
    ProbabilityMap m = sliding_window(model, flipped, geom, cfg, pad_fill);
    m = flip_map(m, f[0], f[1], f[2]);
    if (acc.empty()) {
      out.geom = m.geom;
      acc.assign(m.probs.size(), 0.0);
    }
    for (std::size_t i = 0; i < m.probs.size(); ++i) acc[i] += double(m.probs[i]);
  }
  out.probs.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.probs[i] = float(acc[i] / double(flips.size()));
  return out;
}

ProbabilityMap ensemble_mean(const std::vector<ProbabilityMap>& maps) {
  if (maps.empty()) throw ArgumentError("ensemble_mean: empty map list");
  for (const auto& m : maps)
    if (!(m.geom == maps[0].geom) || m.probs.size() != maps[0].probs.size())
      throw ArgumentError("ensemble_mean: geometry mismatch");
  ProbabilityMap out;
  out.geom = maps[0].geom;
  out.probs.resize(maps[0].probs.size());
  const double inv = 1.0 / double(maps.size());
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t i = 0; i < std::int64_t(out.probs.size()); ++i) {
    double s = 0.0;
    for (const auto& m : maps) s += double(m.probs[std::size_t(i)]);
    out.probs[std::size_t(i)] = float(s * inv);
  }
  return out;
}

LabelVolume probability_argmax(const ProbabilityMap& map) {
  LabelVolume out(map.geom);
  const std::int64_t n = map.geom.num_voxels();
  for (std::int64_t i = 0; i < n; ++i) {
    float best = map.probs[std::size_t(i)];
    std::uint8_t arg = 0;
    for (int c = 1; c < 3; ++c) {
      const float p = map.probs[std::size_t(c * n + i)];
      if (p > best) {  // ties stay at the lower class
        best = p;
        arg = std::uint8_t(c);
      }
    }
    out.labels[std::size_t(i)] = arg;
  }
  return out;
}

LabelVolume embed_to_ct_grid(const LabelVolume& cropped,
                             const CaseSidecar& sidecar,
                             const ImageGeometry& ct_geom) {
  if (cropped.geom.size != sidecar.crop_box.shape())
    throw CaseError("embed: mask does not match the crop box");
  LabelVolume frame_mask(sidecar.frame, std::uint8_t(0));
  const VoxelBox clamped = sidecar.crop_box.clamped(sidecar.frame);
  for (std::int64_t z = clamped.lo.z; z < clamped.hi.z; ++z)
    for (std::int64_t y = clamped.lo.y; y < clamped.hi.y; ++y)
      for (std::int64_t x = clamped.lo.x; x < clamped.hi.x; ++x)
        frame_mask.at(x, y, z) =
            cropped.at(x - sidecar.crop_box.lo.x, y - sidecar.crop_box.lo.y,
                       z - sidecar.crop_box.lo.z);
  return resample_nearest(frame_mask, ct_geom);
}

LabelVolume finalize_prediction(const ProbabilityMap& map,
                                const CaseSidecar& sidecar,
                                const ImageGeometry& ct_geom) {
  if (map.geom.size != sidecar.crop_box.shape())
    throw CaseError("finalize: probability map does not match the crop box");
  return embed_to_ct_grid(probability_argmax(map), sidecar, ct_geom);
}

std::vector<Component> connected_components_26(const LabelVolume& mask,
                                               std::uint8_t cls) {
  const auto& g = mask.geom;
  const std::int64_t nx = g.size.x, ny = g.size.y, nz = g.size.z;
  std::vector<bool> visited(mask.labels.size(), false);
  std::vector<Component> comps;
  std::vector<std::int64_t> stack;
  for (std::int64_t seed = 0; seed < std::int64_t(mask.labels.size()); ++seed) {
    if (visited[std::size_t(seed)] || mask.labels[std::size_t(seed)] != cls)
      continue;
    Component comp;
    stack.assign(1, seed);
    visited[std::size_t(seed)] = true;
    while (!stack.empty()) {
      const std::int64_t cur = stack.back();
      stack.pop_back();
      comp.voxels.push_back(cur);
      const std::int64_t x = cur % nx, y = (cur / nx) % ny, z = cur / (nx * ny);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dx && !dy && !dz) continue;
            const std::int64_t xx = x + dx, yy = y + dy, zz = z + dz;
            if (xx < 0 || xx >= nx || yy < 0 || yy >= ny || zz < 0 || zz >= nz)
              continue;
            const std::int64_t ni = xx + nx * (yy + ny * zz);
            if (!visited[std::size_t(ni)] &&
                mask.labels[std::size_t(ni)] == cls) {
              visited[std::size_t(ni)] = true;
              stack.push_back(ni);
            }
          }
    }
    comps.push_back(std::move(comp));
  }
  return comps;
}

LabelVolume postprocess_nodes(const LabelVolume& mask, const ScalarVolume& pet,
                              const InferenceConfig& cfg) {
  if (!(mask.geom == pet.geom))
    throw CaseError("postprocess_nodes: PET must share the mask grid");
  LabelVolume out = mask;
  const double voxel_mm3 =
      mask.geom.spacing.x * mask.geom.spacing.y * mask.geom.spacing.z;
  for (const auto& comp : connected_components_26(mask, 2)) {
    const double volume = double(comp.voxels.size()) * voxel_mm3;
    double mean_pet = 0.0;
    for (const std::int64_t v : comp.voxels)
      mean_pet += double(pet.values[std::size_t(v)]);
    mean_pet /= double(comp.voxels.size());
    if (volume < cfg.min_component_mm3 || mean_pet < cfg.min_mean_pet)
      for (const std::int64_t v : comp.voxels) out.labels[std::size_t(v)] = 0;
  }
  return out;
}

}  // namespace hnseg
