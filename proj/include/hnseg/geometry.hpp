#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "hnseg/errors.hpp"

namespace hnseg {

struct Vec3i {
  std::int64_t x = 0, y = 0, z = 0;
  bool operator==(const Vec3i&) const = default;
  std::int64_t& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  std::int64_t operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

struct Vec3d {
  double x = 0, y = 0, z = 0;
  bool operator==(const Vec3d&) const = default;
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

// Axis-aligned RAS grid. Voxel (i,j,k) has world center
// origin + (i,j,k) * spacing; no rotation or shear by construction.
struct ImageGeometry {
  Vec3i size{1, 1, 1};
  Vec3d spacing{1.0, 1.0, 1.0};
  Vec3d origin{0.0, 0.0, 0.0};

  bool operator==(const ImageGeometry&) const = default;

  std::int64_t num_voxels() const { return size.x * size.y * size.z; }

  std::int64_t index(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return ix + size.x * (iy + size.y * iz);
  }

  Vec3d voxel_center(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return {origin.x + double(ix) * spacing.x,
            origin.y + double(iy) * spacing.y,
            origin.z + double(iz) * spacing.z};
  }

  Vec3d continuous_index(const Vec3d& world) const {
    return {(world.x - origin.x) / spacing.x,
            (world.y - origin.y) / spacing.y,
            (world.z - origin.z) / spacing.z};
  }

  void validate() const {
    if (size.x < 1 || size.y < 1 || size.z < 1)
      throw ArgumentError("geometry: all size components must be >= 1");
    if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0))
      throw ArgumentError("geometry: all spacing components must be > 0");
  }
};

// Half-open voxel index box [lo, hi). May extend outside a geometry; crop()
// fills the out-of-bounds part with a caller-chosen constant.
struct VoxelBox {
  Vec3i lo, hi;

  bool operator==(const VoxelBox&) const = default;

  Vec3i shape() const { return {hi.x - lo.x, hi.y - lo.y, hi.z - lo.z}; }

  bool empty() const { return hi.x <= lo.x || hi.y <= lo.y || hi.z <= lo.z; }

  VoxelBox clamped(const ImageGeometry& g) const {
    VoxelBox b;
    b.lo = {std::max<std::int64_t>(lo.x, 0), std::max<std::int64_t>(lo.y, 0),
            std::max<std::int64_t>(lo.z, 0)};
    b.hi = {std::min(hi.x, g.size.x), std::min(hi.y, g.size.y),
            std::min(hi.z, g.size.z)};
    return b;
  }

  bool contains(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return ix >= lo.x && ix < hi.x && iy >= lo.y && iy < hi.y && iz >= lo.z &&
           iz < hi.z;
  }
};

// Target grid for a resolution change. Preserves the edge-to-edge world
// extent of the source and places voxel centers half a spacing inside it,
// so an upsample x2 of one voxel yields a 2x2x2 block under nearest lookup.
inline ImageGeometry resampled_geometry(const ImageGeometry& src,
                                        const Vec3d& new_spacing) {
  if (!(new_spacing.x > 0 && new_spacing.y > 0 && new_spacing.z > 0))
    throw ArgumentError("resampled_geometry: spacing must be > 0");
  auto axis = [](std::int64_t n, double sp, double org, double nsp,
                 std::int64_t& n_out, double& org_out) {
    double extent = double(n) * sp;
    n_out = std::max<std::int64_t>(1, std::llround(extent / nsp));
    org_out = (org - 0.5 * sp) + 0.5 * nsp;
  };
  ImageGeometry out;
  out.spacing = new_spacing;
  axis(src.size.x, src.spacing.x, src.origin.x, new_spacing.x, out.size.x,
       out.origin.x);
  axis(src.size.y, src.spacing.y, src.origin.y, new_spacing.y, out.size.y,
       out.origin.y);
  axis(src.size.z, src.spacing.z, src.origin.z, new_spacing.z, out.size.z,
       out.origin.z);
  return out;
}

}  // namespace hnseg
