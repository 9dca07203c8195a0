#include "hnseg/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hnseg/exec.hpp"
#include "hnseg/json_io.hpp"
#include "hnseg/nifti.hpp"
#include "hnseg/rng.hpp"

namespace hnseg {

namespace {

ImageGeometry grid_for(const Vec3d& extent, const Vec3d& spacing) {
  ImageGeometry g;
  for (int a = 0; a < 3; ++a) {
    g.size[a] = std::max<std::int64_t>(1, std::llround(extent[a] / spacing[a]));
    g.spacing[a] = spacing[a];
    g.origin[a] = 0.5 * spacing[a];  // world extent starts at 0
  }
  return g;
}

// normalized superellipsoid radius: <= 1 inside the lesion
double lesion_rho(const LesionTruth& l, const Vec3d& w) {
  const double ux = std::abs((w.x - l.center.x) / l.semi.x);
  const double uy = std::abs((w.y - l.center.y) / l.semi.y);
  const double uz = std::abs((w.z - l.center.z) / l.semi.z);
  return std::pow(std::pow(ux, l.exponent) + std::pow(uy, l.exponent) +
                      std::pow(uz, l.exponent),
                  1.0 / l.exponent);
}

// cheap axis-aligned rejection before the pow() calls; reach in rho units
bool lesion_near(const LesionTruth& l, const Vec3d& w, double reach) {
  return std::abs(w.x - l.center.x) <= l.semi.x * reach &&
         std::abs(w.y - l.center.y) <= l.semi.y * reach &&
         std::abs(w.z - l.center.z) <= l.semi.z * reach;
}

LesionTruth draw_lesion(Rng& rng, const PhantomSpec& s, int cls,
                        const Vec3d& head_center, double head_top_z) {
  LesionTruth l;
  l.cls = cls;
  const bool tumor = cls == 1;
  const double r = rng.uniform(tumor ? s.tumor_radius_min : s.node_radius_min,
                               tumor ? s.tumor_radius_max : s.node_radius_max);
  for (int a = 0; a < 3; ++a)
    l.semi[a] = r * rng.uniform(1.0 - s.semi_axis_jitter, 1.0 + s.semi_axis_jitter);
  l.exponent = rng.uniform(s.exponent_min, s.exponent_max);
  l.uptake = rng.uniform(tumor ? s.tumor_uptake_min : s.node_uptake_min,
                         tumor ? s.tumor_uptake_max : s.node_uptake_max);
  const double semi_max = std::max({l.semi.x, l.semi.y, l.semi.z});
  const double lat_max = std::max(1.0, s.lesion_lateral_max - semi_max);
  // uniform in the lateral disk around the head axis
  for (;;) {
    const double dx = rng.uniform(-lat_max, lat_max);
    const double dy = rng.uniform(-lat_max, lat_max);
    if (dx * dx + dy * dy > lat_max * lat_max) continue;
    l.center.x = head_center.x + dx;
    l.center.y = head_center.y + dy;
    break;
  }
  const double zmin = tumor ? s.tumor_z_below_top_min : s.node_z_below_top_min;
  const double zmax = tumor ? s.tumor_z_below_top_max : s.node_z_below_top_max;
  l.center.z = head_top_z - rng.uniform(zmin, zmax);
  return l;
}

bool overlaps(const LesionTruth& a, const LesionTruth& b) {
  const double dx = a.center.x - b.center.x, dy = a.center.y - b.center.y,
               dz = a.center.z - b.center.z;
  const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
  const double ra = std::max({a.semi.x, a.semi.y, a.semi.z});
  const double rb = std::max({b.semi.x, b.semi.y, b.semi.z});
  // the 6 mm gap keeps voxelized blobs 26-disconnected at up to 3 mm spacing
  return d < ra + rb + 6.0;
}

void to_json(nlohmann::json& j, const LesionTruth& l) {
  j = nlohmann::json{{"cls", l.cls},
                     {"center", l.center},
                     {"semi", l.semi},
                     {"exponent", l.exponent},
                     {"uptake", l.uptake}};
}

LesionTruth lesion_from_json(const nlohmann::json& j) {
  LesionTruth l;
  l.cls = j.at("cls").get<int>();
  j.at("center").get_to(l.center);
  j.at("semi").get_to(l.semi);
  l.exponent = j.at("exponent").get<double>();
  l.uptake = j.at("uptake").get<double>();
  return l;
}

}  // namespace

PhantomCase generate_case(const PhantomSpec& spec, int index) {
  if (spec.tumor_count_weights.size() != 3)
    throw ConfigError("phantom: tumor_count_weights must have 3 entries");
  PhantomCase out;
  Rng rng(Rng::mix(spec.seed, std::uint64_t(index)));

  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%03d", index);
  CaseTruth& truth = out.truth;
  truth.case_id = buf;

  truth.head_radius = rng.uniform(spec.head_radius_min, spec.head_radius_max);
  truth.head_center.x =
      spec.extent_mm.x / 2 +
      rng.uniform(-spec.head_lateral_jitter, spec.head_lateral_jitter);
  truth.head_center.y =
      spec.extent_mm.y / 2 +
      rng.uniform(-spec.head_lateral_jitter, spec.head_lateral_jitter);
  const double margin =
      rng.uniform(spec.head_top_margin_min, spec.head_top_margin_max);
  truth.head_top_z = spec.extent_mm.z - margin;
  truth.head_center.z = truth.head_top_z - truth.head_radius;

  const double u = rng.uniform();
  const double w0 = spec.tumor_count_weights[0];
  const double w1 = spec.tumor_count_weights[1];
  const double wsum = w0 + w1 + spec.tumor_count_weights[2];
  truth.tumor_count = u * wsum < w0 ? 0 : (u * wsum < w0 + w1 ? 1 : 2);
  truth.node_count =
      spec.node_count_min +
      int(rng.uniform_int(spec.node_count_max - spec.node_count_min + 1));

  for (int i = 0; i < truth.tumor_count + truth.node_count; ++i) {
    const int cls = i < truth.tumor_count ? 1 : 2;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 200)
        throw StateError("phantom: could not place non-overlapping lesions");
      LesionTruth l =
          draw_lesion(rng, spec, cls, truth.head_center, truth.head_top_z);
      bool ok = true;
      for (const auto& other : truth.lesions)
        if (overlaps(l, other)) {
          ok = false;
          break;
        }
      if (ok) {
        truth.lesions.push_back(l);
        break;
      }
    }
  }

  const ImageGeometry ct_g = grid_for(spec.extent_mm, spec.ct_spacing);
  const ImageGeometry pet_g = grid_for(spec.extent_mm, spec.pet_spacing);
  out.ct = ScalarVolume(ct_g);
  out.pet = ScalarVolume(pet_g);
  out.label = LabelVolume(ct_g);

  const Vec3d hc = truth.head_center;
  const double R = truth.head_radius;
  const std::uint64_t ct_noise_seed = rng.next_u64();
  const std::uint64_t pet_noise_seed = rng.next_u64();
  const auto& lesions = truth.lesions;

#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t iz = 0; iz < ct_g.size.z; ++iz) {
    for (std::int64_t iy = 0; iy < ct_g.size.y; ++iy)
      for (std::int64_t ix = 0; ix < ct_g.size.x; ++ix) {
        const Vec3d w = ct_g.voxel_center(ix, iy, iz);
        const double dhx = w.x - hc.x, dhy = w.y - hc.y, dhz = w.z - hc.z;
        const double head_d = std::sqrt(dhx * dhx + dhy * dhy + dhz * dhz);
        const double lat = std::sqrt(dhx * dhx + dhy * dhy);
        const bool in_head = head_d <= R;
        const bool in_body = lat <= spec.body_radius && w.z <= hc.z;
        double v = spec.ct_air;
        std::uint8_t lab = 0;
        if (in_head || in_body) {
          v = spec.ct_soft;
          // skull shell and a spine-like column
          if (in_head && head_d >= R - 4.0) v = spec.ct_bone;
          if (in_body && lat <= 9.0 && w.z <= hc.z - R * 0.5) v = spec.ct_bone;
          for (const auto& l : lesions)
            if (lesion_near(l, w, 1.0) && lesion_rho(l, w) <= 1.0) {
              v = l.cls == 1 ? spec.ct_tumor : spec.ct_node;
              lab = std::uint8_t(l.cls);
              break;
            }
        }
        const std::int64_t idx = ct_g.index(ix, iy, iz);
        v += spec.ct_noise_sigma *
             hash_noise(Rng::mix(ct_noise_seed, std::uint64_t(idx)));
        out.ct.values[std::size_t(idx)] = float(v);
        out.label.labels[std::size_t(idx)] = lab;
      }
  }

#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t iz = 0; iz < pet_g.size.z; ++iz) {
    for (std::int64_t iy = 0; iy < pet_g.size.y; ++iy)
      for (std::int64_t ix = 0; ix < pet_g.size.x; ++ix) {
        const Vec3d w = pet_g.voxel_center(ix, iy, iz);
        const double dhx = w.x - hc.x, dhy = w.y - hc.y, dhz = w.z - hc.z;
        const double head_d = std::sqrt(dhx * dhx + dhy * dhy + dhz * dhz);
        const double lat = std::sqrt(dhx * dhx + dhy * dhy);
        double v = 0.0;
        if (head_d <= R)
          v = spec.pet_head;
        else if (lat <= spec.body_radius && w.z <= hc.z)
          v = spec.pet_body;
        for (const auto& l : lesions) {
          if (!lesion_near(l, w, 2.5)) continue;  // tail beyond this is < 1e-6
          const double rho = lesion_rho(l, w);
          const double c = l.uptake / (1.0 + std::exp(-(1.0 - rho) / spec.lesion_falloff));
          v = std::max(v, c);
        }
        const std::int64_t idx = pet_g.index(ix, iy, iz);
        v += spec.pet_noise_sigma *
             hash_noise(Rng::mix(pet_noise_seed, std::uint64_t(idx)));
        out.pet.values[std::size_t(idx)] = float(v);
      }
  }
  return out;
}

CorpusManifest generate_corpus(const PhantomSpec& spec, int n,
                               const std::string& dir) {
  if (n < 1) throw ArgumentError("generate_corpus: need n >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  CorpusManifest manifest;
  manifest.seed = spec.seed;
  nlohmann::json jcases = nlohmann::json::array();
  for (int i = 0; i < n; ++i) {
    PhantomCase c = generate_case(spec, i);
    const std::string cdir = dir + "/" + c.truth.case_id;
    fs::create_directories(cdir);
    write_nifti(c.ct, cdir + "/ct.nii.gz");
    write_nifti(c.pet, cdir + "/pet.nii.gz");
    write_nifti(c.label, cdir + "/label.nii.gz");
    nlohmann::json jl = nlohmann::json::array();
    for (const auto& l : c.truth.lesions) {
      nlohmann::json one;
      to_json(one, l);
      jl.push_back(one);
    }
    jcases.push_back({{"case_id", c.truth.case_id},
                      {"head_center", c.truth.head_center},
                      {"head_radius", c.truth.head_radius},
                      {"head_top_z", c.truth.head_top_z},
                      {"tumor_count", c.truth.tumor_count},
                      {"node_count", c.truth.node_count},
                      {"lesions", jl}});
    manifest.cases.push_back(std::move(c.truth));
  }
  nlohmann::json j{{"seed", spec.seed}, {"count", n}, {"cases", jcases}};
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << j.dump(2) << "\n";
  return manifest;
}

CorpusManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  CorpusManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jc : j.at("cases")) {
    CaseTruth t;
    t.case_id = jc.at("case_id").get<std::string>();
    jc.at("head_center").get_to(t.head_center);
    t.head_radius = jc.at("head_radius").get<double>();
    t.head_top_z = jc.at("head_top_z").get<double>();
    t.tumor_count = jc.at("tumor_count").get<int>();
    t.node_count = jc.at("node_count").get<int>();
    for (const auto& jl : jc.at("lesions")) t.lesions.push_back(lesion_from_json(jl));
    m.cases.push_back(std::move(t));
  }
  return m;
}

}  // namespace hnseg
