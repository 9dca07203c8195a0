#include "hnseg/preprocess.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hnseg/exec.hpp"
#include "hnseg/json_io.hpp"
#include "hnseg/nifti.hpp"

namespace hnseg {

double detect_head_top(const ScalarVolume& pet, const CropHeuristicConfig& cfg) {
  const auto& g = pet.geom;
  for (std::int64_t iz = g.size.z - 1; iz >= 0; --iz) {
    const float* slice = pet.values.data() + std::size_t(g.index(0, 0, iz));
    const std::int64_t n = g.size.x * g.size.y;
    for (std::int64_t i = 0; i < n; ++i)
      if (slice[i] > float(cfg.pet_threshold))
        return g.origin.z + double(iz) * g.spacing.z;
  }
  throw DetectionError("head-top detection: no PET voxel above threshold " +
                       std::to_string(cfg.pet_threshold));
}

std::pair<double, double> detect_centerline(const ScalarVolume& pet,
                                            double head_top_z,
                                            const CropHeuristicConfig& cfg) {
  const auto& g = pet.geom;
  const double z_lo = head_top_z - cfg.top_slab_mm;
  double sx = 0.0, sy = 0.0;
  std::int64_t count = 0;
  for (std::int64_t iz = 0; iz < g.size.z; ++iz) {
    const double wz = g.origin.z + double(iz) * g.spacing.z;
    if (wz < z_lo - 1e-9 || wz > head_top_z + 1e-9) continue;
    for (std::int64_t iy = 0; iy < g.size.y; ++iy)
      for (std::int64_t ix = 0; ix < g.size.x; ++ix)
        if (pet.at(ix, iy, iz) > float(cfg.pet_threshold)) {
          sx += double(ix);
          sy += double(iy);
          ++count;
        }
  }
  if (count == 0)
    throw DetectionError("center-line detection: empty foreground in top slab");
  return {g.origin.x + (sx / double(count)) * g.spacing.x,
          g.origin.y + (sy / double(count)) * g.spacing.y};
}

VoxelBox hn_box(double cx, double cy, double head_top_z,
                const CropHeuristicConfig& cfg, const ImageGeometry& target_geom) {
  VoxelBox box;
  const std::int64_t nx = std::llround(cfg.box_xy_mm / target_geom.spacing.x);
  const std::int64_t ny = std::llround(cfg.box_xy_mm / target_geom.spacing.y);
  const std::int64_t nz = std::llround(cfg.box_z_mm / target_geom.spacing.z);
  box.lo.x = std::llround((cx - cfg.box_xy_mm / 2 - target_geom.origin.x) /
                          target_geom.spacing.x);
  box.lo.y = std::llround((cy - cfg.box_xy_mm / 2 - target_geom.origin.y) /
                          target_geom.spacing.y);
  box.hi.x = box.lo.x + nx;
  box.hi.y = box.lo.y + ny;
  box.hi.z =
      std::llround((head_top_z - target_geom.origin.z) / target_geom.spacing.z);
  box.lo.z = box.hi.z - nz;
  return box;
}

namespace {
inline float logistic(double t) { return float(1.0 / (1.0 + std::exp(-t))); }
}  // namespace

ScalarVolume normalize_ct(const ScalarVolume& ct, const NormalizationConfig& cfg) {
  if (!(cfg.ct_low < cfg.ct_high))
    throw ArgumentError("normalize_ct: window low must be below high");
  if (!(cfg.ct_logit_span > 0))
    throw ArgumentError("normalize_ct: logit span must be > 0");
  ScalarVolume out(ct.geom);
  const double inv = 1.0 / (cfg.ct_high - cfg.ct_low);
  const std::int64_t n = std::int64_t(ct.values.size());
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = (double(ct.values[std::size_t(i)]) - cfg.ct_low) * inv * 2.0 - 1.0;
    out.values[std::size_t(i)] = logistic(t * cfg.ct_logit_span);
  }
  return out;
}

ScalarVolume normalize_pet(const ScalarVolume& pet, double* mean_out,
                           double* std_out) {
  const std::int64_t n = std::int64_t(pet.values.size());
  double s = 0.0;
  for (const float v : pet.values) s += double(v);
  const double mean = s / double(n);
  double v2 = 0.0;
  for (const float v : pet.values) {
    const double d = double(v) - mean;
    v2 += d * d;
  }
  const double sd = std::sqrt(v2 / double(n));
  if (!(sd > 0.0))
    throw NormalizationError("normalize_pet: constant volume (std = 0)");
  ScalarVolume out(pet.geom);
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t i = 0; i < n; ++i)
    out.values[std::size_t(i)] =
        logistic((double(pet.values[std::size_t(i)]) - mean) / sd);
  if (mean_out) *mean_out = mean;
  if (std_out) *std_out = sd;
  return out;
}

ScalarVolume denormalize_pet(const ScalarVolume& pet_n, double mean, double sd) {
  ScalarVolume out(pet_n.geom);
  const std::int64_t n = std::int64_t(pet_n.values.size());
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t i = 0; i < n; ++i) {
    double p = double(pet_n.values[std::size_t(i)]);
    p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
    out.values[std::size_t(i)] = float(mean + sd * std::log(p / (1.0 - p)));
  }
  return out;
}

Tensor<float> make_network_input(const ScalarVolume& ct_n,
                                 const ScalarVolume& pet_n) {
  if (!(ct_n.geom == pet_n.geom))
    throw ArgumentError("make_network_input: CT and PET geometry mismatch");
  const auto& g = ct_n.geom;
  auto t = make_tensor<float>({1, 2, g.size.z, g.size.y, g.size.x});
  // volume storage is x-fastest, identical to a [D,H,W] tensor channel
  std::copy(ct_n.values.begin(), ct_n.values.end(), t->values.begin());
  std::copy(pet_n.values.begin(), pet_n.values.end(),
            t->values.begin() + ct_n.values.size());
  return t;
}

PreprocessedCase preprocess_case(const std::string& case_id,
                                 const ScalarVolume& ct, const ScalarVolume& pet,
                                 const LabelVolume* label,
                                 const Vec3d& resample_spacing,
                                 const CropHeuristicConfig& crop_cfg,
                                 const NormalizationConfig& norm_cfg) {
  PreprocessedCase pc;
  pc.sidecar.case_id = case_id;
  pc.sidecar.original_ct = ct.geom;
  const ImageGeometry frame = resampled_geometry(ct.geom, resample_spacing);
  pc.sidecar.frame = frame;

  const ScalarVolume ct_f = resample_linear(ct, frame);
  const ScalarVolume pet_f = resample_linear(pet, frame);

  const double ztop = detect_head_top(pet_f, crop_cfg);
  const auto [cx, cy] = detect_centerline(pet_f, ztop, crop_cfg);
  const VoxelBox box = hn_box(cx, cy, ztop, crop_cfg, frame);
  pc.sidecar.crop_box = box;

  const ScalarVolume ct_c = crop(ct_f, box, float(norm_cfg.ct_low));
  const ScalarVolume pet_c = crop(pet_f, box, 0.0f);

  pc.ct = normalize_ct(ct_c, norm_cfg);
  pc.pet = normalize_pet(pet_c, &pc.sidecar.pet_mean, &pc.sidecar.pet_std);
  pc.sidecar.ct_low = norm_cfg.ct_low;
  pc.sidecar.ct_high = norm_cfg.ct_high;
  pc.sidecar.ct_logit_span = norm_cfg.ct_logit_span;

  if (label) {
    const LabelVolume label_f = resample_nearest(*label, frame);
    pc.label = crop(label_f, box, std::uint8_t(0));
    pc.has_label = true;
  }
  return pc;
}

void save_case(const std::string& dir, const PreprocessedCase& pc) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_nifti(pc.ct, dir + "/ct.nii.gz");
  write_nifti(pc.pet, dir + "/pet.nii.gz");
  if (pc.has_label) write_nifti(pc.label, dir + "/label.nii.gz");
  nlohmann::json j{{"case_id", pc.sidecar.case_id},
                   {"original_ct", pc.sidecar.original_ct},
                   {"frame", pc.sidecar.frame},
                   {"crop_box", pc.sidecar.crop_box},
                   {"pet_mean", pc.sidecar.pet_mean},
                   {"pet_std", pc.sidecar.pet_std},
                   {"ct_low", pc.sidecar.ct_low},
                   {"ct_high", pc.sidecar.ct_high},
                   {"ct_logit_span", pc.sidecar.ct_logit_span}};
  std::ofstream f(dir + "/sidecar.json");
  if (!f) throw IoError("cannot write " + dir + "/sidecar.json");
  f << j.dump(2) << "\n";
}

PreprocessedCase load_case(const std::string& dir) {
  namespace fs = std::filesystem;
  PreprocessedCase pc;
  pc.ct = read_nifti_scalar(dir + "/ct.nii.gz");
  pc.pet = read_nifti_scalar(dir + "/pet.nii.gz");
  if (fs::exists(dir + "/label.nii.gz")) {
    pc.label = read_nifti_labels(dir + "/label.nii.gz");
    pc.has_label = true;
  }
  std::ifstream f(dir + "/sidecar.json");
  if (!f) throw IoError("cannot read " + dir + "/sidecar.json");
  nlohmann::json j = nlohmann::json::parse(f, nullptr, true);
  pc.sidecar.case_id = j.at("case_id").get<std::string>();
  j.at("original_ct").get_to(pc.sidecar.original_ct);
  j.at("frame").get_to(pc.sidecar.frame);
  j.at("crop_box").get_to(pc.sidecar.crop_box);
  pc.sidecar.pet_mean = j.at("pet_mean").get<double>();
  pc.sidecar.pet_std = j.at("pet_std").get<double>();
  pc.sidecar.ct_low = j.at("ct_low").get<double>();
  pc.sidecar.ct_high = j.at("ct_high").get<double>();
  pc.sidecar.ct_logit_span = j.at("ct_logit_span").get<double>();
  return pc;
}

}  // namespace hnseg
