#include "hnseg/volume.hpp"

#include <cmath>

#include "hnseg/exec.hpp"

namespace hnseg {

void ScalarVolume::validate() const {
  geom.validate();
  if (std::int64_t(values.size()) != geom.num_voxels())
    throw ArgumentError("scalar volume: value count does not match geometry");
  for (float v : values)
    if (!std::isfinite(v))
      throw ArgumentError("scalar volume: non-finite value");
}

void LabelVolume::validate() const {
  geom.validate();
  if (std::int64_t(labels.size()) != geom.num_voxels())
    throw ArgumentError("label volume: label count does not match geometry");
  for (std::uint8_t l : labels)
    if (l > 2) throw ArgumentError("label volume: label outside {0,1,2}");
}

namespace {

inline std::int64_t clamp_index(std::int64_t i, std::int64_t n) {
  return i < 0 ? 0 : (i >= n ? n - 1 : i);
}

inline std::int64_t nearest_index(double u, std::int64_t n) {
  return clamp_index(std::llround(u), n);
}

}  // namespace

ScalarVolume resample_linear(const ScalarVolume& v, const ImageGeometry& target) {
  target.validate();
  const ImageGeometry& sg = v.geom;
  ScalarVolume out(target);
  const float* src = v.values.data();
  float* dst = out.values.data();
  const std::int64_t nx = sg.size.x, ny = sg.size.y, nz = sg.size.z;

#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t kz = 0; kz < target.size.z; ++kz) {
    // Clamping the continuous index to the grid gives edge replication.
    double uz = (target.origin.z + double(kz) * target.spacing.z - sg.origin.z) /
                sg.spacing.z;
    uz = std::min(std::max(uz, 0.0), double(nz - 1));
    const std::int64_t z0 = std::min(std::int64_t(uz), nz - 1);
    const std::int64_t z1 = std::min(z0 + 1, nz - 1);
    const double fz = uz - double(z0);
    for (std::int64_t ky = 0; ky < target.size.y; ++ky) {
      double uy =
          (target.origin.y + double(ky) * target.spacing.y - sg.origin.y) /
          sg.spacing.y;
      uy = std::min(std::max(uy, 0.0), double(ny - 1));
      const std::int64_t y0 = std::min(std::int64_t(uy), ny - 1);
      const std::int64_t y1 = std::min(y0 + 1, ny - 1);
      const double fy = uy - double(y0);
      const double w00 = (1.0 - fy) * (1.0 - fz), w01 = (1.0 - fy) * fz;
      const double w10 = fy * (1.0 - fz), w11 = fy * fz;
      const float* p00 = src + sg.index(0, y0, z0);
      const float* p01 = src + sg.index(0, y0, z1);
      const float* p10 = src + sg.index(0, y1, z0);
      const float* p11 = src + sg.index(0, y1, z1);
      float* orow = dst + target.index(0, ky, kz);
      for (std::int64_t kx = 0; kx < target.size.x; ++kx) {
        double ux =
            (target.origin.x + double(kx) * target.spacing.x - sg.origin.x) /
            sg.spacing.x;
        ux = std::min(std::max(ux, 0.0), double(nx - 1));
        const std::int64_t x0 = std::min(std::int64_t(ux), nx - 1);
        const std::int64_t x1 = std::min(x0 + 1, nx - 1);
        const double fx = ux - double(x0);
        const double a = w00 * ((1.0 - fx) * p00[x0] + fx * p00[x1]) +
                         w01 * ((1.0 - fx) * p01[x0] + fx * p01[x1]) +
                         w10 * ((1.0 - fx) * p10[x0] + fx * p10[x1]) +
                         w11 * ((1.0 - fx) * p11[x0] + fx * p11[x1]);
        orow[kx] = float(a);
      }
    }
  }
  return out;
}

namespace {

template <typename VolT>
VolT resample_nearest_impl(const VolT& v, const ImageGeometry& target) {
  target.validate();
  const ImageGeometry& sg = v.geom;
  VolT out(target);

#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t kz = 0; kz < target.size.z; ++kz) {
    const std::int64_t z =
        nearest_index((target.origin.z + double(kz) * target.spacing.z -
                       sg.origin.z) /
                          sg.spacing.z,
                      sg.size.z);
    for (std::int64_t ky = 0; ky < target.size.y; ++ky) {
      const std::int64_t y =
          nearest_index((target.origin.y + double(ky) * target.spacing.y -
                         sg.origin.y) /
                            sg.spacing.y,
                        sg.size.y);
      for (std::int64_t kx = 0; kx < target.size.x; ++kx) {
        const std::int64_t x =
            nearest_index((target.origin.x + double(kx) * target.spacing.x -
                           sg.origin.x) /
                              sg.spacing.x,
                          sg.size.x);
        out.at(kx, ky, kz) = v.at(x, y, z);
      }
    }
  }
  return out;
}

template <typename VolT, typename ValT>
VolT crop_impl(const VolT& v, const VoxelBox& box, ValT fill) {
  if (box.empty()) throw ArgumentError("crop: empty box");
  const VoxelBox in = box.clamped(v.geom);
  if (in.empty())
    throw ArgumentError("crop: box does not intersect the volume");
  ImageGeometry g;
  g.size = box.shape();
  g.spacing = v.geom.spacing;
  g.origin = v.geom.voxel_center(box.lo.x, box.lo.y, box.lo.z);
  VolT out(g, fill);
  for (std::int64_t z = in.lo.z; z < in.hi.z; ++z)
    for (std::int64_t y = in.lo.y; y < in.hi.y; ++y)
      for (std::int64_t x = in.lo.x; x < in.hi.x; ++x)
        out.at(x - box.lo.x, y - box.lo.y, z - box.lo.z) = v.at(x, y, z);
  return out;
}

}  // namespace

ScalarVolume resample_nearest(const ScalarVolume& v, const ImageGeometry& target) {
  return resample_nearest_impl(v, target);
}

LabelVolume resample_nearest(const LabelVolume& v, const ImageGeometry& target) {
  return resample_nearest_impl(v, target);
}

ScalarVolume crop(const ScalarVolume& v, const VoxelBox& box, float fill) {
  return crop_impl(v, box, fill);
}

LabelVolume crop(const LabelVolume& v, const VoxelBox& box, std::uint8_t fill) {
  return crop_impl(v, box, fill);
}

}  // namespace hnseg
