#pragma once

#include <string>
#include <vector>

#include "hnseg/volume.hpp"

namespace hnseg {

// Synthetic PET/CT/label generator. CT and PET live on different grids that
// share one world frame; lesions are superellipsoids with a smooth PET
// falloff so segmentation is nontrivial but learnable by a small network.
struct PhantomSpec {
  std::uint64_t seed = 1234;
  Vec3d extent_mm{256, 256, 512};
  Vec3d ct_spacing{1, 1, 3};
  Vec3d pet_spacing{4, 4, 4};

  double head_radius_min = 40, head_radius_max = 60;
  double head_top_margin_min = 10, head_top_margin_max = 40;
  double head_lateral_jitter = 20;
  double body_radius = 90;

  // tumor count in {0,1,2} drawn by weight; node count uniform in [min,max]
  std::vector<double> tumor_count_weights{0.1, 0.7, 0.2};
  int node_count_min = 1, node_count_max = 3;

  double tumor_radius_min = 8, tumor_radius_max = 16;
  double node_radius_min = 5, node_radius_max = 12;
  double lesion_lateral_max = 55;
  double tumor_z_below_top_min = 60, tumor_z_below_top_max = 160;
  double node_z_below_top_min = 90, node_z_below_top_max = 250;
  double semi_axis_jitter = 0.3;
  double exponent_min = 2.0, exponent_max = 4.0;

  double pet_body = 0.2, pet_head = 1.5;
  double tumor_uptake_min = 6.0, tumor_uptake_max = 8.0;
  double node_uptake_min = 4.0, node_uptake_max = 5.5;
  double lesion_falloff = 0.1;
  double pet_noise_sigma = 0.02;

  double ct_air = -1000, ct_soft = 40, ct_bone = 700;
  double ct_tumor = 120, ct_node = -60;
  double ct_noise_sigma = 15;

  bool operator==(const PhantomSpec&) const = default;
};

struct LesionTruth {
  int cls = 0;  // 1 tumor, 2 node
  Vec3d center;
  Vec3d semi;
  double exponent = 2.0;
  double uptake = 0.0;
};

struct CaseTruth {
  std::string case_id;
  Vec3d head_center;
  double head_radius = 0.0;
  double head_top_z = 0.0;
  int tumor_count = 0;
  int node_count = 0;
  std::vector<LesionTruth> lesions;
};

struct PhantomCase {
  ScalarVolume ct;
  ScalarVolume pet;
  LabelVolume label;  // on the CT grid
  CaseTruth truth;
};

// Deterministic per (spec.seed, index).
PhantomCase generate_case(const PhantomSpec& spec, int index);

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::vector<CaseTruth> cases;
};

// Writes dir/case_XXX/{ct,pet,label}.nii.gz plus dir/manifest.json.
CorpusManifest generate_corpus(const PhantomSpec& spec, int n,
                               const std::string& dir);

CorpusManifest load_manifest(const std::string& path);

}  // namespace hnseg
