#pragma once

#include <array>
#include <string>
#include <vector>

#include "hnseg/preprocess.hpp"
#include "hnseg/rng.hpp"
#include "hnseg/tensor.hpp"

namespace hnseg {

// Deterministic k-fold partition: fold sizes differ by at most one, folds are
// pairwise disjoint and cover all ids. Throws ArgumentError when k > n or k < 1.
std::vector<std::vector<std::string>> split_folds(std::vector<std::string> ids,
                                                  int k, std::uint64_t seed);

void save_folds(const std::string& path,
                const std::vector<std::vector<std::string>>& folds);
std::vector<std::vector<std::string>> load_folds(const std::string& path);

struct SamplerConfig {
  int patch_size = 192;
  double p_tumor = 0.45;
  double p_node = 0.45;
  double p_background = 0.10;

  bool operator==(const SamplerConfig&) const = default;
  void validate() const;
};

// Preprocessed case plus cached foreground voxel lists per class.
struct CaseRecord {
  std::string id;
  PreprocessedCase data;
  std::array<std::vector<std::int64_t>, 2> foreground;  // linear indices, class 1 and 2

  static CaseRecord build(std::string id, PreprocessedCase pc);
};

struct Patch {
  Tensor<float> input;  // [1,2,p,p,p]
  LabelPatch target;    // [1,p,p,p]
  int drawn_class = 0;  // class that chose the center, after the redraw policy
  bool redrawn = false;
};

// Draws the patch center class by the configured probabilities; a drawn
// foreground class absent from the case is redrawn proportionally among the
// remaining options. The window stays centered on the chosen voxel; parts
// outside the volume are padded with the crop fill constants.
Patch sample_patch(const CaseRecord& rec, const SamplerConfig& cfg, Rng& rng);

struct AugmentConfig {
  double flip_prob = 0.5;  // per axis
  double affine_prob = 0.2;
  double rot_deg = 15.0;
  double scale_frac = 0.10;
  double intensity_prob = 0.2;  // per CT intensity op
  double intensity_scale = 0.10;
  double intensity_shift = 0.10;
  double noise_sigma_max = 0.05;
  double blur_sigma_max = 1.0;
  double softclamp_span = 4.0;

  bool operator==(const AugmentConfig&) const = default;
};

// Spatial transforms hit both channels and the target identically (labels via
// nearest neighbor); intensity transforms touch the CT channel only. A CT
// channel pushed outside (0,1) is re-passed through the soft window.
void augment(Patch& patch, const AugmentConfig& cfg, Rng& rng);

}  // namespace hnseg
