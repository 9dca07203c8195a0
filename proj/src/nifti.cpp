#include "hnseg/nifti.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace hnseg {

namespace {

// NIfTI-1 header, 348 bytes.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration, toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

bool g_last_reoriented = false;

template <typename T>
void bswap(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(p[i], p[sizeof(T) - 1 - i]);
}

void swap_header(Nifti1Header& h) {
  bswap(h.sizeof_hdr);
  bswap(h.extents);
  bswap(h.session_error);
  for (auto& d : h.dim) bswap(d);
  bswap(h.intent_p1);
  bswap(h.intent_p2);
  bswap(h.intent_p3);
  bswap(h.intent_code);
  bswap(h.datatype);
  bswap(h.bitpix);
  bswap(h.slice_start);
  for (auto& p : h.pixdim) bswap(p);
  bswap(h.vox_offset);
  bswap(h.scl_slope);
  bswap(h.scl_inter);
  bswap(h.slice_end);
  bswap(h.cal_max);
  bswap(h.cal_min);
  bswap(h.slice_duration);
  bswap(h.toffset);
  bswap(h.glmax);
  bswap(h.glmin);
  bswap(h.qform_code);
  bswap(h.sform_code);
  bswap(h.quatern_b);
  bswap(h.quatern_c);
  bswap(h.quatern_d);
  bswap(h.qoffset_x);
  bswap(h.qoffset_y);
  bswap(h.qoffset_z);
  for (auto& v : h.srow_x) bswap(v);
  for (auto& v : h.srow_y) bswap(v);
  for (auto& v : h.srow_z) bswap(v);
}

struct GzReader {
  gzFile f = nullptr;
  explicit GzReader(const std::string& path) {
    f = gzopen(path.c_str(), "rb");  // reads uncompressed files transparently
    if (!f) throw IoError("cannot open " + path);
  }
  ~GzReader() {
    if (f) gzclose(f);
  }
  std::size_t read(void* dst, std::size_t n) {
    int r = gzread(f, dst, unsigned(n));
    return r < 0 ? 0 : std::size_t(r);
  }
};

// 3x3 direction matrix (world step per voxel index step) plus translation.
struct Affine {
  double m[3][3];
  double t[3];
};

Affine affine_from_header(const Nifti1Header& h) {
  Affine a{};
  if (h.sform_code > 0) {
    for (int c = 0; c < 3; ++c) {
      a.m[0][c] = h.srow_x[c];
      a.m[1][c] = h.srow_y[c];
      a.m[2][c] = h.srow_z[c];
    }
    a.t[0] = h.srow_x[3];
    a.t[1] = h.srow_y[3];
    a.t[2] = h.srow_z[3];
    return a;
  }
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double s = 1.0 - (b * b + c * c + d * d);
    const double qa = s > 0 ? std::sqrt(s) : 0.0;
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    const double R[3][3] = {
        {qa * qa + b * b - c * c - d * d, 2 * (b * c - qa * d),
         2 * (b * d + qa * c)},
        {2 * (b * c + qa * d), qa * qa + c * c - b * b - d * d,
         2 * (c * d - qa * b)},
        {2 * (b * d - qa * c), 2 * (c * d + qa * b),
         qa * qa + d * d - b * b - c * c}};
    const double sp[3] = {h.pixdim[1], h.pixdim[2], double(qfac) * h.pixdim[3]};
    for (int r = 0; r < 3; ++r)
      for (int c2 = 0; c2 < 3; ++c2) a.m[r][c2] = R[r][c2] * sp[c2];
    a.t[0] = h.qoffset_x;
    a.t[1] = h.qoffset_y;
    a.t[2] = h.qoffset_z;
    return a;
  }
  // Analyze-style fallback: pixdim scales, zero origin.
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.m[r][c] = (r == c) ? h.pixdim[1 + c] : 0.0;
  return a;
}

struct AxisMap {
  int world_axis[3];  // world axis fed by each voxel axis
  int sign[3];
  double step[3];  // |world step| per voxel axis
};

AxisMap analyze_affine(const Affine& a, const std::string& path) {
  AxisMap map{};
  bool used[3] = {false, false, false};
  for (int c = 0; c < 3; ++c) {
    int best = 0;
    double mag = 0;
    for (int r = 0; r < 3; ++r)
      if (std::abs(a.m[r][c]) > mag) {
        mag = std::abs(a.m[r][c]);
        best = r;
      }
    if (mag <= 0.0)
      throw OrientationError("degenerate affine column in " + path);
    for (int r = 0; r < 3; ++r)
      if (r != best && std::abs(a.m[r][c]) > 1e-3 * mag)
        throw OrientationError(
            "affine of " + path +
            " is not an axis-aligned permutation x diagonal (shear/rotation)");
    if (used[best])
      throw OrientationError("affine of " + path + " maps two voxel axes to one world axis");
    used[best] = true;
    map.world_axis[c] = best;
    map.sign[c] = a.m[best][c] < 0 ? -1 : 1;
    map.step[c] = mag;
  }
  return map;
}

template <typename StoreT, typename RawT>
void reorient_copy(const std::vector<RawT>& raw, const std::int64_t in_size[3],
                   const AxisMap& map, std::vector<StoreT>& out,
                   const Vec3i& out_size, double slope, double inter) {
  // For each world axis find the voxel axis that feeds it.
  int src_axis[3], src_sign[3];
  for (int c = 0; c < 3; ++c) {
    src_axis[map.world_axis[c]] = c;
    src_sign[map.world_axis[c]] = map.sign[c];
  }
  const std::int64_t stride[3] = {1, in_size[0], in_size[0] * in_size[1]};
  out.resize(std::size_t(out_size.x * out_size.y * out_size.z));
  std::size_t o = 0;
  std::int64_t idx[3];
  const std::int64_t osz[3] = {out_size.x, out_size.y, out_size.z};
  std::int64_t oi[3];
  for (oi[2] = 0; oi[2] < osz[2]; ++oi[2])
    for (oi[1] = 0; oi[1] < osz[1]; ++oi[1])
      for (oi[0] = 0; oi[0] < osz[0]; ++oi[0]) {
        for (int w = 0; w < 3; ++w) {
          const int c = src_axis[w];
          idx[c] = src_sign[w] > 0 ? oi[w] : (in_size[c] - 1 - oi[w]);
        }
        const RawT r =
            raw[std::size_t(idx[0] * stride[0] + idx[1] * stride[1] + idx[2] * stride[2])];
        if constexpr (std::is_same_v<StoreT, float>)
          out[o++] = float(slope * double(r) + inter);
        else
          out[o++] = StoreT(r);
      }
}

template <typename RawT>
std::vector<RawT> read_raw(GzReader& in, std::int64_t n, bool swapped,
                           const std::string& path) {
  std::vector<RawT> raw(static_cast<std::size_t>(n));
  const std::size_t bytes = raw.size() * sizeof(RawT);
  if (in.read(raw.data(), bytes) != bytes)
    throw FormatError("truncated voxel data in " + path);
  if (swapped && sizeof(RawT) > 1)
    for (auto& v : raw) bswap(v);
  return raw;
}

void fill_header_for_write(Nifti1Header& h, const ImageGeometry& g,
                           std::int16_t datatype, std::int16_t bitpix) {
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = std::int16_t(g.size.x);
  h.dim[2] = std::int16_t(g.size.y);
  h.dim[3] = std::int16_t(g.size.z);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = float(g.spacing.x);
  h.pixdim[2] = float(g.spacing.y);
  h.pixdim[3] = float(g.spacing.z);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // mm
  h.sform_code = 1;
  h.qform_code = 0;
  h.srow_x[0] = float(g.spacing.x);
  h.srow_x[3] = float(g.origin.x);
  h.srow_y[1] = float(g.spacing.y);
  h.srow_y[3] = float(g.origin.y);
  h.srow_z[2] = float(g.spacing.z);
  h.srow_z[3] = float(g.origin.z);
  std::memcpy(h.magic, "n+1", 4);
}

void write_bytes(const std::string& path, const void* hdr, const void* data,
                 std::size_t data_bytes) {
  static const char pad[4] = {0, 0, 0, 0};
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    bool ok = gzwrite(f, hdr, 348) == 348 && gzwrite(f, pad, 4) == 4 &&
              (data_bytes == 0 ||
               gzwrite(f, data, unsigned(data_bytes)) == int(data_bytes));
    ok = (gzclose(f) == Z_OK) && ok;
    if (!ok) throw IoError("failed writing " + path);
  } else {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(static_cast<const char*>(hdr), 348);
    f.write(pad, 4);
    f.write(static_cast<const char*>(data), std::streamsize(data_bytes));
    if (!f) throw IoError("failed writing " + path);
  }
}

}  // namespace

bool last_read_was_reoriented() { return g_last_reoriented; }

NiftiVolume read_nifti(const std::string& path) {
  GzReader in(path);
  Nifti1Header h{};
  if (in.read(&h, sizeof(h)) != sizeof(h))
    throw FormatError("truncated NIfTI header in " + path);

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    std::int32_t s = h.sizeof_hdr;
    bswap(s);
    if (s != 348) throw FormatError("bad sizeof_hdr in " + path);
    swapped = true;
    swap_header(h);
  }
  if (std::memcmp(h.magic, "n+1", 3) != 0) {
    if (std::memcmp(h.magic, "ni1", 3) == 0)
      throw UnsupportedError("hdr/img pairs are not supported: " + path);
    throw FormatError("bad NIfTI magic in " + path);
  }
  if (h.dim[0] < 3)
    throw UnsupportedError("need a 3D volume in " + path);
  for (int d = 4; d <= h.dim[0] && d < 8; ++d)
    if (h.dim[d] > 1)
      throw UnsupportedError("4D volumes are not supported: " + path);
  const std::int64_t in_size[3] = {h.dim[1], h.dim[2], h.dim[3]};
  if (in_size[0] < 1 || in_size[1] < 1 || in_size[2] < 1)
    throw FormatError("non-positive dimensions in " + path);
  const std::int64_t n = in_size[0] * in_size[1] * in_size[2];

  const Affine aff = affine_from_header(h);
  const AxisMap map = analyze_affine(aff, path);
  g_last_reoriented = !(map.world_axis[0] == 0 && map.world_axis[1] == 1 &&
                        map.world_axis[2] == 2 && map.sign[0] > 0 &&
                        map.sign[1] > 0 && map.sign[2] > 0);

  ImageGeometry g;
  for (int c = 0; c < 3; ++c) {
    const int w = map.world_axis[c];
    g.size[w] = in_size[c];
    g.spacing[w] = map.step[c];
    // world coordinate of the voxel that becomes output index 0 on axis w
    const std::int64_t i0 = map.sign[c] > 0 ? 0 : in_size[c] - 1;
    g.origin[w] = aff.t[w] + aff.m[w][c] * double(i0);
  }
  g.validate();

  // Skip any header extensions up to vox_offset.
  const std::int64_t off = std::int64_t(h.vox_offset);
  if (off < 348) throw FormatError("vox_offset below header size in " + path);
  std::int64_t skip = off - 348;
  char sink[512];
  while (skip > 0) {
    const std::size_t chunk = std::size_t(std::min<std::int64_t>(skip, 512));
    if (in.read(sink, chunk) != chunk)
      throw FormatError("truncated extension block in " + path);
    skip -= std::int64_t(chunk);
  }

  const double slope = (h.scl_slope == 0.0f) ? 1.0 : double(h.scl_slope);
  const double inter = double(h.scl_inter);

  if (h.datatype == kDtUint8) {
    LabelVolume lv;
    lv.geom = g;
    const auto raw = read_raw<std::uint8_t>(in, n, swapped, path);
    reorient_copy<std::uint8_t>(raw, in_size, map, lv.labels, g.size, 1.0, 0.0);
    lv.validate();
    return lv;
  }

  ScalarVolume sv;
  sv.geom = g;
  switch (h.datatype) {
    case kDtInt16: {
      const auto raw = read_raw<std::int16_t>(in, n, swapped, path);
      reorient_copy<float>(raw, in_size, map, sv.values, g.size, slope, inter);
      break;
    }
    case kDtInt32: {
      const auto raw = read_raw<std::int32_t>(in, n, swapped, path);
      reorient_copy<float>(raw, in_size, map, sv.values, g.size, slope, inter);
      break;
    }
    case kDtFloat32: {
      const auto raw = read_raw<float>(in, n, swapped, path);
      reorient_copy<float>(raw, in_size, map, sv.values, g.size, slope, inter);
      break;
    }
    case kDtFloat64: {
      const auto raw = read_raw<double>(in, n, swapped, path);
      reorient_copy<float>(raw, in_size, map, sv.values, g.size, slope, inter);
      break;
    }
    default:
      throw UnsupportedError("unsupported NIfTI datatype " +
                             std::to_string(h.datatype) + " in " + path);
  }
  sv.validate();
  return sv;
}

ScalarVolume read_nifti_scalar(const std::string& path) {
  NiftiVolume v = read_nifti(path);
  if (auto* s = std::get_if<ScalarVolume>(&v)) return std::move(*s);
  // Promote a label file when a scalar was asked for.
  const auto& lv = std::get<LabelVolume>(v);
  ScalarVolume s;
  s.geom = lv.geom;
  s.values.assign(lv.labels.begin(), lv.labels.end());
  return s;
}

LabelVolume read_nifti_labels(const std::string& path) {
  NiftiVolume v = read_nifti(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
  const auto& sv = std::get<ScalarVolume>(v);
  LabelVolume lv;
  lv.geom = sv.geom;
  lv.labels.resize(sv.values.size());
  for (std::size_t i = 0; i < sv.values.size(); ++i) {
    const float f = sv.values[i];
    const auto r = std::lround(f);
    if (std::abs(f - float(r)) > 1e-4f || r < 0 || r > 2)
      throw CaseError(path + " does not hold {0,1,2} labels");
    lv.labels[i] = std::uint8_t(r);
  }
  return lv;
}

void write_nifti(const ScalarVolume& v, const std::string& path) {
  v.validate();
  Nifti1Header h;
  fill_header_for_write(h, v.geom, kDtFloat32, 32);
  write_bytes(path, &h, v.values.data(), v.values.size() * sizeof(float));
}

void write_nifti(const LabelVolume& v, const std::string& path) {
  v.validate();
  Nifti1Header h;
  fill_header_for_write(h, v.geom, kDtUint8, 8);
  write_bytes(path, &h, v.labels.data(), v.labels.size());
}

}  // namespace hnseg
