#pragma once

#include <cstdint>
#include <vector>

#include "hnseg/geometry.hpp"

namespace hnseg {

// Scalar field on an axis-aligned grid, float32 values in x-fastest order.
struct ScalarVolume {
  ImageGeometry geom;
  std::vector<float> values;

  ScalarVolume() = default;
  explicit ScalarVolume(const ImageGeometry& g, float fill = 0.0f)
      : geom(g), values(std::size_t(g.num_voxels()), fill) {}

  float& at(std::int64_t ix, std::int64_t iy, std::int64_t iz) {
    return values[std::size_t(geom.index(ix, iy, iz))];
  }
  float at(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return values[std::size_t(geom.index(ix, iy, iz))];
  }

  void validate() const;
};

// Label field over {0 background, 1 GTVp, 2 GTVn} on the same grid type.
struct LabelVolume {
  ImageGeometry geom;
  std::vector<std::uint8_t> labels;

  LabelVolume() = default;
  explicit LabelVolume(const ImageGeometry& g, std::uint8_t fill = 0)
      : geom(g), labels(std::size_t(g.num_voxels()), fill) {}

  std::uint8_t& at(std::int64_t ix, std::int64_t iy, std::int64_t iz) {
    return labels[std::size_t(geom.index(ix, iy, iz))];
  }
  std::uint8_t at(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return labels[std::size_t(geom.index(ix, iy, iz))];
  }

  void validate() const;
};

// Trilinear resample in world space; samples outside the source extent
// replicate the nearest edge value.
ScalarVolume resample_linear(const ScalarVolume& v, const ImageGeometry& target);

// Nearest source voxel center in world space. Never invents label values.
ScalarVolume resample_nearest(const ScalarVolume& v, const ImageGeometry& target);
LabelVolume resample_nearest(const LabelVolume& v, const ImageGeometry& target);

// Extract a box; out-of-bounds voxels take `fill`. The output origin is the
// world position of box.lo, so retained voxels keep their world coordinates.
// Throws ArgumentError if the box does not intersect the volume.
ScalarVolume crop(const ScalarVolume& v, const VoxelBox& box, float fill);
LabelVolume crop(const LabelVolume& v, const VoxelBox& box, std::uint8_t fill = 0);

}  // namespace hnseg
