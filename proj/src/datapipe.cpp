#include "hnseg/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "hnseg/json_io.hpp"
#include "hnseg/volume.hpp"

namespace hnseg {

std::vector<std::vector<std::string>> split_folds(std::vector<std::string> ids,
                                                  int k, std::uint64_t seed) {
  if (k < 1) throw ArgumentError("split_folds: k must be >= 1");
  if (std::size_t(k) > ids.size())
    throw ArgumentError("split_folds: more folds than cases");
  std::sort(ids.begin(), ids.end());
  Rng rng(Rng::mix(seed, 0x0f01d5));
  for (std::size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[std::size_t(rng.uniform_int(std::int64_t(i)))]);
  std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ids.size(); ++i)
    folds[i % std::size_t(k)].push_back(ids[i]);
  return folds;
}

void save_folds(const std::string& path,
                const std::vector<std::vector<std::string>>& folds) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t f = 0; f < folds.size(); ++f)
    for (const auto& id : folds[f]) j[id] = f;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<std::vector<std::string>> load_folds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  std::size_t k = 0;
  for (const auto& item : j.items())
    k = std::max(k, std::size_t(item.value().get<int>()) + 1);
  std::vector<std::vector<std::string>> folds(k);
  // keys sorted by nlohmann -> deterministic order within folds
  for (const auto& item : j.items())
    folds[std::size_t(item.value().get<int>())].push_back(item.key());
  return folds;
}

void SamplerConfig::validate() const {
  if (patch_size < 1) throw ConfigError("sampler: patch_size must be >= 1");
  if (p_tumor < 0 || p_node < 0 || p_background < 0)
    throw ConfigError("sampler: probabilities must be nonnegative");
  if (std::abs(p_tumor + p_node + p_background - 1.0) > 1e-9)
    throw ConfigError("sampler: class probabilities must sum to 1");
}

CaseRecord CaseRecord::build(std::string id, PreprocessedCase pc) {
  CaseRecord rec;
  rec.id = std::move(id);
  rec.data = std::move(pc);
  if (rec.data.has_label) {
    const auto& labels = rec.data.label.labels;
    for (std::int64_t i = 0; i < std::int64_t(labels.size()); ++i) {
      const std::uint8_t l = labels[std::size_t(i)];
      if (l == 1)
        rec.foreground[0].push_back(i);
      else if (l == 2)
        rec.foreground[1].push_back(i);
    }
  }
  return rec;
}

namespace {

int draw_class(const CaseRecord& rec, const SamplerConfig& cfg, Rng& rng,
               bool& redrawn) {
  const bool have1 = !rec.foreground[0].empty();
  const bool have2 = !rec.foreground[1].empty();
  double u = rng.uniform();
  int cls = u < cfg.p_tumor ? 1 : (u < cfg.p_tumor + cfg.p_node ? 2 : 0);
  redrawn = false;
  if ((cls == 1 && !have1) || (cls == 2 && !have2)) {
    redrawn = true;
    // redraw proportionally among the remaining options
    double w1 = have1 ? cfg.p_tumor : 0.0;
    double w2 = have2 ? cfg.p_node : 0.0;
    const int absent = cls;
    if (absent == 1) w1 = 0.0;
    if (absent == 2) w2 = 0.0;
    const double wb = cfg.p_background;
    const double total = w1 + w2 + wb;
    u = rng.uniform() * total;
    cls = u < w1 ? 1 : (u < w1 + w2 ? 2 : 0);
    if ((cls == 1 && !have1) || (cls == 2 && !have2)) cls = 0;
  }
  return cls;
}

}  // namespace

Patch sample_patch(const CaseRecord& rec, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& geom = rec.data.ct.geom;
  Patch patch;
  patch.drawn_class = draw_class(rec, cfg, rng, patch.redrawn);

  std::int64_t center;
  if (patch.drawn_class == 0) {
    center = rng.uniform_int(geom.num_voxels());
  } else {
    const auto& list = rec.foreground[std::size_t(patch.drawn_class - 1)];
    center = list[std::size_t(rng.uniform_int(std::int64_t(list.size())))];
  }
  const std::int64_t cx = center % geom.size.x;
  const std::int64_t cy = (center / geom.size.x) % geom.size.y;
  const std::int64_t cz = center / (geom.size.x * geom.size.y);

  const std::int64_t p = cfg.patch_size;
  VoxelBox box;
  box.lo = {cx - p / 2, cy - p / 2, cz - p / 2};
  box.hi = {box.lo.x + p, box.lo.y + p, box.lo.z + p};

  const auto& sc = rec.data.sidecar;
  const float ct_fill = float(1.0 / (1.0 + std::exp(sc.ct_logit_span)));
  const float pet_fill =
      float(1.0 / (1.0 + std::exp(sc.pet_mean / std::max(sc.pet_std, 1e-12))));

  const ScalarVolume ct_p = crop(rec.data.ct, box, ct_fill);
  const ScalarVolume pet_p = crop(rec.data.pet, box, pet_fill);

  patch.input = make_tensor<float>({1, 2, p, p, p});
  std::copy(ct_p.values.begin(), ct_p.values.end(), patch.input->values.begin());
  std::copy(pet_p.values.begin(), pet_p.values.end(),
            patch.input->values.begin() + ct_p.values.size());

  patch.target.shape = {1, p, p, p};
  if (rec.data.has_label) {
    const LabelVolume lab_p = crop(rec.data.label, box, std::uint8_t(0));
    patch.target.labels = lab_p.labels;
  } else {
    patch.target.labels.assign(std::size_t(p * p * p), 0);
  }
  return patch;
}

namespace {

struct Mat3 {
  double m[3][3];
};

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a.m[i][k] * b.m[k][j];
      r.m[i][j] = s;
    }
  return r;
}

Mat3 rotation(int axis, double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  r.m[a][a] = c;
  r.m[a][b] = -s;
  r.m[b][a] = s;
  r.m[b][b] = c;
  return r;
}

// Resample patch channels (trilinear, fill 0.5) and labels (nearest, fill 0)
// through the inverse affine about the patch center.
void apply_affine(Patch& patch, const Mat3& inv, std::int64_t p) {
  const double c = (double(p) - 1.0) / 2.0;
  const auto& in = patch.input->values;
  std::vector<float> out(in.size());
  std::vector<std::uint8_t> lab_out(patch.target.labels.size());
  const auto& lab_in = patch.target.labels;
  for (std::int64_t z = 0; z < p; ++z)
    for (std::int64_t y = 0; y < p; ++y)
      for (std::int64_t x = 0; x < p; ++x) {
        // tensor axes are (D,H,W) = (z,y,x)
        const double v[3] = {double(x) - c, double(y) - c, double(z) - c};
        double q[3];
        for (int i = 0; i < 3; ++i)
          q[i] = inv.m[i][0] * v[0] + inv.m[i][1] * v[1] + inv.m[i][2] * v[2] + c;
        const std::int64_t o = (z * p + y) * p + x;
        // nearest for labels
        const std::int64_t nx = std::llround(q[0]), ny = std::llround(q[1]),
                           nz = std::llround(q[2]);
        lab_out[std::size_t(o)] =
            (nx >= 0 && nx < p && ny >= 0 && ny < p && nz >= 0 && nz < p)
                ? lab_in[std::size_t((nz * p + ny) * p + nx)]
                : std::uint8_t(0);
        // trilinear for both channels
        for (int ch = 0; ch < 2; ++ch) {
          const float* src = in.data() + std::size_t(ch) * std::size_t(p * p * p);
          float val = 0.5f;
          if (q[0] > -1 && q[0] < double(p) && q[1] > -1 && q[1] < double(p) &&
              q[2] > -1 && q[2] < double(p)) {
            double acc = 0.0;
            const std::int64_t x0 = std::int64_t(std::floor(q[0]));
            const std::int64_t y0 = std::int64_t(std::floor(q[1]));
            const std::int64_t z0 = std::int64_t(std::floor(q[2]));
            const double fx = q[0] - double(x0), fy = q[1] - double(y0),
                         fz = q[2] - double(z0);
            for (int dz = 0; dz < 2; ++dz)
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const std::int64_t xs = x0 + dx, ys = y0 + dy, zs = z0 + dz;
                  const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) *
                                   (dz ? fz : 1 - fz);
                  const double sample =
                      (xs >= 0 && xs < p && ys >= 0 && ys < p && zs >= 0 && zs < p)
                          ? double(src[std::size_t((zs * p + ys) * p + xs)])
                          : 0.5;
                  acc += w * sample;
                }
            val = float(acc);
          }
          out[std::size_t(ch) * std::size_t(p * p * p) + std::size_t(o)] = val;
        }
      }
  patch.input->values = std::move(out);
  patch.target.labels = std::move(lab_out);
}

void flip_axis(Patch& patch, int axis, std::int64_t p) {
  // axis: 0=x (W), 1=y (H), 2=z (D)
  auto& vals = patch.input->values;
  auto& labs = patch.target.labels;
  auto flip_index = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    std::int64_t i[3] = {x, y, z};
    i[axis] = p - 1 - i[axis];
    return (i[2] * p + i[1]) * p + i[0];
  };
  std::vector<float> v2(vals.size());
  std::vector<std::uint8_t> l2(labs.size());
  const std::int64_t plane = p * p * p;
  for (std::int64_t z = 0; z < p; ++z)
    for (std::int64_t y = 0; y < p; ++y)
      for (std::int64_t x = 0; x < p; ++x) {
        const std::int64_t src = flip_index(x, y, z);
        const std::int64_t dst = (z * p + y) * p + x;
        v2[std::size_t(dst)] = vals[std::size_t(src)];
        v2[std::size_t(plane + dst)] = vals[std::size_t(plane + src)];
        l2[std::size_t(dst)] = labs[std::size_t(src)];
      }
  vals = std::move(v2);
  labs = std::move(l2);
}

void gaussian_blur_channel(float* data, std::int64_t p, double sigma) {
  const int radius = std::max(1, int(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(std::size_t(2 * radius + 1));
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[std::size_t(i + radius)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
    ksum += kernel[std::size_t(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;
  std::vector<float> tmp(std::size_t(p * p * p));
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? p : p * p);
    for (std::int64_t z = 0; z < p; ++z)
      for (std::int64_t y = 0; y < p; ++y)
        for (std::int64_t x = 0; x < p; ++x) {
          std::int64_t i[3] = {x, y, z};
          const std::int64_t base = (z * p + y) * p + x;
          double acc = 0;
          for (int t = -radius; t <= radius; ++t) {
            std::int64_t j = i[axis] + t;
            j = std::min(std::max<std::int64_t>(j, 0), p - 1);  // replicate edges
            acc += kernel[std::size_t(t + radius)] *
                   double(data[std::size_t(base + (j - i[axis]) * stride)]);
          }
          tmp[std::size_t(base)] = float(acc);
        }
    std::copy(tmp.begin(), tmp.end(), data);
  }
}

}  // namespace

void augment(Patch& patch, const AugmentConfig& cfg, Rng& rng) {
  const std::int64_t p = patch.target.shape[1];

  if (rng.uniform() < cfg.affine_prob) {
    const double d2r = M_PI / 180.0;
    const double ax = rng.uniform(-cfg.rot_deg, cfg.rot_deg) * d2r;
    const double ay = rng.uniform(-cfg.rot_deg, cfg.rot_deg) * d2r;
    const double az = rng.uniform(-cfg.rot_deg, cfg.rot_deg) * d2r;
    double s[3];
    for (auto& v : s) v = rng.uniform(1.0 - cfg.scale_frac, 1.0 + cfg.scale_frac);
    // inverse of M = Rz Ry Rx S is S^-1 Rx^T Ry^T Rz^T
    Mat3 rt = matmul(matmul(rotation(0, -ax), rotation(1, -ay)), rotation(2, -az));
    Mat3 inv{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) inv.m[i][j] = rt.m[i][j] / s[i];
    apply_affine(patch, inv, p);
  }

  for (int axis = 0; axis < 3; ++axis)
    if (rng.uniform() < cfg.flip_prob) flip_axis(patch, axis, p);

  // CT-channel intensity ops only
  float* ct = patch.input->values.data();
  const std::int64_t n = p * p * p;
  if (rng.uniform() < cfg.intensity_prob) {
    const float f = float(rng.uniform(1.0 - cfg.intensity_scale, 1.0 + cfg.intensity_scale));
    for (std::int64_t i = 0; i < n; ++i) ct[i] *= f;
  }
  if (rng.uniform() < cfg.intensity_prob) {
    const float d = float(rng.uniform(-cfg.intensity_shift, cfg.intensity_shift));
    for (std::int64_t i = 0; i < n; ++i) ct[i] += d;
  }
  if (rng.uniform() < cfg.intensity_prob) {
    const double sigma = rng.uniform(0.0, cfg.noise_sigma_max);
    for (std::int64_t i = 0; i < n; ++i) ct[i] += float(sigma * rng.normal());
  }
  if (rng.uniform() < cfg.intensity_prob) {
    const double sigma = rng.uniform(0.25, std::max(0.26, cfg.blur_sigma_max));
    gaussian_blur_channel(ct, p, sigma);
  }

  float lo = ct[0], hi = ct[0];
  for (std::int64_t i = 0; i < n; ++i) {
    lo = std::min(lo, ct[i]);
    hi = std::max(hi, ct[i]);
  }
  if (lo < 0.0f || hi > 1.0f) {
    // re-pass through the soft window so the channel stays in (0,1)
    for (std::int64_t i = 0; i < n; ++i) {
      const double t = (2.0 * double(ct[i]) - 1.0) * cfg.softclamp_span;
      ct[i] = float(1.0 / (1.0 + std::exp(-t)));
    }
  }
}

}  // namespace hnseg
