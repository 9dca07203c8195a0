#pragma once

#include <array>
#include <functional>
#include <vector>

#include "hnseg/preprocess.hpp"
#include "hnseg/tensor.hpp"
#include "hnseg/volume.hpp"

namespace hnseg {

struct InferenceConfig {
  int roi_size = 192;
  double overlap = 0.5;  // in [0, 1)
  bool tta = true;
  bool postprocess = false;  // off by default; it hurt node accuracy
  double min_component_mm3 = 100.0;
  double min_mean_pet = 1.5;

  bool operator==(const InferenceConfig&) const = default;
};

// Per-class probability field on the cropped frame, channel-major [3,D,H,W].
struct ProbabilityMap {
  static constexpr int kClasses = 3;
  ImageGeometry geom;
  std::vector<float> probs;

  float at(int cls, std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return probs[std::size_t(cls * geom.num_voxels() + geom.index(ix, iy, iz))];
  }
};

// Maps a [1,2,d,h,w] input window to [1,3,d,h,w] class probabilities.
using Predictor = std::function<Tensor<float>(const Tensor<float>&)>;

// Overlapping Gaussian-weighted window inference; accumulation runs in double
// so a constant-output model reproduces its constant exactly in float32.
// Inputs smaller than the roi are padded (per-channel fill) and cropped back.
ProbabilityMap sliding_window(const Predictor& model, const Tensor<float>& input,
                              const ImageGeometry& geom,
                              const InferenceConfig& cfg,
                              std::array<float, 2> pad_fill = {0.5f, 0.5f});

// The 8 axis-flip subsets {}, x, y, z, xy, xz, yz, xyz as (flip_x, flip_y,
// flip_z) triples in that order.
std::vector<std::array<bool, 3>> tta_flip_set();

Tensor<float> flip_tensor(const Tensor<float>& t, bool flip_x, bool flip_y,
                          bool flip_z);
ProbabilityMap flip_map(const ProbabilityMap& m, bool flip_x, bool flip_y,
                        bool flip_z);

// flip input -> sliding_window -> unflip probabilities, averaged over all 8.
ProbabilityMap tta_predict(const Predictor& model, const Tensor<float>& input,
                           const ImageGeometry& geom, const InferenceConfig& cfg,
                           std::array<float, 2> pad_fill = {0.5f, 0.5f});

// Voxelwise arithmetic mean; requires identical geometry, nonempty list.
ProbabilityMap ensemble_mean(const std::vector<ProbabilityMap>& maps);

// Per-voxel argmax with ties broken toward the lower class index.
LabelVolume probability_argmax(const ProbabilityMap& map);

// Places a cropped-frame mask back into the full frame (zeros outside the
// crop) and nearest-neighbor resamples it to the original CT grid.
LabelVolume embed_to_ct_grid(const LabelVolume& cropped,
                             const CaseSidecar& sidecar,
                             const ImageGeometry& ct_geom);

// argmax (ties toward the lower class) -> embed into the full frame (zeros
// outside the crop) -> nearest-neighbor resample to the original CT grid.
LabelVolume finalize_prediction(const ProbabilityMap& map,
                                const CaseSidecar& sidecar,
                                const ImageGeometry& ct_geom);

struct Component {
  std::vector<std::int64_t> voxels;  // linear indices
};

// 26-connected components of the given class, in deterministic scan order.
std::vector<Component> connected_components_26(const LabelVolume& mask,
                                               std::uint8_t cls);

// Deletes class-2 components that are too small or too PET-cold; class 1 is
// never touched. pet must be raw (pre-normalization) on the mask grid.
LabelVolume postprocess_nodes(const LabelVolume& mask, const ScalarVolume& pet,
                              const InferenceConfig& cfg);

}  // namespace hnseg
