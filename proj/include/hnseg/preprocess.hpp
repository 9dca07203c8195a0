#pragma once

#include <optional>
#include <string>
#include <utility>

#include "hnseg/tensor.hpp"
#include "hnseg/volume.hpp"

namespace hnseg {

struct CropHeuristicConfig {
  double pet_threshold = 1.0;  // activity units of the PET volume
  double top_slab_mm = 40.0;
  double box_xy_mm = 200.0;
  double box_z_mm = 310.0;

  bool operator==(const CropHeuristicConfig&) const = default;
};

struct NormalizationConfig {
  double ct_low = -200.0;
  double ct_high = 300.0;
  double ct_logit_span = 4.0;

  bool operator==(const NormalizationConfig&) const = default;
};

// World z of the superior-most axial slice with any voxel above threshold.
double detect_head_top(const ScalarVolume& pet, const CropHeuristicConfig& cfg);

// Foreground centroid (x, y) in mm over the slab below the head top.
std::pair<double, double> detect_centerline(const ScalarVolume& pet,
                                            double head_top_z,
                                            const CropHeuristicConfig& cfg);

// Fixed-size box centered laterally on (cx, cy), hanging box_z_mm below the
// head top, expressed in voxel indices of target_geom. May extend out of
// bounds; crop() pads such voxels.
VoxelBox hn_box(double cx, double cy, double head_top_z,
                const CropHeuristicConfig& cfg, const ImageGeometry& target_geom);

// logistic(((x - low)/(high - low)*2 - 1) * span): soft window instead of a
// hard clamp; strictly monotone, output in (0,1).
ScalarVolume normalize_ct(const ScalarVolume& ct, const NormalizationConfig& cfg);

// logistic((x - mean)/std) with population statistics over the whole volume.
// Throws NormalizationError on a constant volume. Reports the statistics so
// the raw PET can be reconstructed later.
ScalarVolume normalize_pet(const ScalarVolume& pet, double* mean_out = nullptr,
                           double* std_out = nullptr);

// Inverse of normalize_pet given the recorded statistics.
ScalarVolume denormalize_pet(const ScalarVolume& pet_n, double mean, double sd);

// [1, 2, D, H, W]; channel 0 = CT, channel 1 = PET. Geometry must match.
Tensor<float> make_network_input(const ScalarVolume& ct_n, const ScalarVolume& pet_n);

// Everything needed to interpret a preprocessed case and map predictions
// back to the original CT grid.
struct CaseSidecar {
  std::string case_id;
  ImageGeometry original_ct;
  ImageGeometry frame;     // common resampled frame (1 mm in the paper setup)
  VoxelBox crop_box;       // in frame indices, before padding
  double pet_mean = 0.0;
  double pet_std = 1.0;
  double ct_low = 0.0;
  double ct_high = 0.0;
  double ct_logit_span = 0.0;
};

struct PreprocessedCase {
  ScalarVolume ct;  // normalized, cropped
  ScalarVolume pet; // normalized, cropped
  LabelVolume label;
  bool has_label = false;
  CaseSidecar sidecar;
};

// resample both modalities to the common frame -> detect on PET -> crop
// CT/PET/labels -> normalize (PET statistics over the cropped region).
PreprocessedCase preprocess_case(const std::string& case_id,
                                 const ScalarVolume& ct, const ScalarVolume& pet,
                                 const LabelVolume* label,
                                 const Vec3d& resample_spacing,
                                 const CropHeuristicConfig& crop_cfg,
                                 const NormalizationConfig& norm_cfg);

void save_case(const std::string& dir, const PreprocessedCase& pc);
PreprocessedCase load_case(const std::string& dir);

}  // namespace hnseg
