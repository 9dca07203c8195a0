#include "hnseg/reference_kernels.hpp"

#include <algorithm>
#include <cmath>

namespace hnseg::reference {

namespace {
inline std::int64_t at5(std::int64_t n, std::int64_t c, std::int64_t z,
                        std::int64_t y, std::int64_t x, const std::int64_t s[5]) {
  return (((n * s[1] + c) * s[2] + z) * s[3] + y) * s[4] + x;
}
}  // namespace

std::vector<float> conv3d_forward(const std::vector<float>& x,
                                  const std::int64_t xs[5],
                                  const std::vector<float>& w,
                                  const std::vector<float>& b, int k,
                                  int stride, int padding, std::int64_t ys[5]) {
  const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const std::int64_t Co = std::int64_t(b.size());
  ys[0] = N;
  ys[1] = Co;
  ys[2] = (D + 2 * padding - k) / stride + 1;
  ys[3] = (H + 2 * padding - k) / stride + 1;
  ys[4] = (W + 2 * padding - k) / stride + 1;
  std::vector<float> y(std::size_t(ys[0] * ys[1] * ys[2] * ys[3] * ys[4]));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Co; ++co)
      for (std::int64_t zo = 0; zo < ys[2]; ++zo)
        for (std::int64_t yo = 0; yo < ys[3]; ++yo)
          for (std::int64_t xo = 0; xo < ys[4]; ++xo) {
            float acc = b[std::size_t(co)];
            for (std::int64_t ci = 0; ci < Ci; ++ci)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const std::int64_t z = zo * stride + kz - padding;
                    const std::int64_t yy = yo * stride + ky - padding;
                    const std::int64_t xx = xo * stride + kx - padding;
                    if (z < 0 || z >= D || yy < 0 || yy >= H || xx < 0 ||
                        xx >= W)
                      continue;
                    acc += x[std::size_t(at5(n, ci, z, yy, xx, xs))] *
                           w[std::size_t(
                               (((co * Ci + ci) * k + kz) * k + ky) * k + kx)];
                  }
            y[std::size_t(at5(n, co, zo, yo, xo, ys))] = acc;
          }
  return y;
}

std::vector<float> conv3d_backward_input(const std::vector<float>& dy,
                                         const std::int64_t ys[5],
                                         const std::vector<float>& w,
                                         const std::int64_t xs[5], int k,
                                         int stride, int padding) {
  const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const std::int64_t Co = ys[1];
  std::vector<float> dx(std::size_t(N * Ci * D * H * W), 0.0f);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t ci = 0; ci < Ci; ++ci)
      for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t x = 0; x < W; ++x) {
            float acc = 0.0f;
            for (std::int64_t co = 0; co < Co; ++co)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const std::int64_t zn = z + padding - kz;
                    const std::int64_t yn = y + padding - ky;
                    const std::int64_t xn = x + padding - kx;
                    if (zn < 0 || yn < 0 || xn < 0 || zn % stride ||
                        yn % stride || xn % stride)
                      continue;
                    const std::int64_t zo = zn / stride, yo = yn / stride,
                                       xo = xn / stride;
                    if (zo >= ys[2] || yo >= ys[3] || xo >= ys[4]) continue;
                    acc += dy[std::size_t(at5(n, co, zo, yo, xo, ys))] *
                           w[std::size_t(
                               (((co * Ci + ci) * k + kz) * k + ky) * k + kx)];
                  }
            dx[std::size_t(at5(n, ci, z, y, x, xs))] = acc;
          }
  return dx;
}

std::vector<float> conv3d_backward_weight(const std::vector<float>& dy,
                                          const std::int64_t ys[5],
                                          const std::vector<float>& x,
                                          const std::int64_t xs[5], int k,
                                          int stride, int padding) {
  const std::int64_t Ci = xs[1], Co = ys[1];
  std::vector<float> dw(std::size_t(Co * Ci * k * k * k), 0.0f);
  for (std::int64_t co = 0; co < Co; ++co)
    for (std::int64_t ci = 0; ci < Ci; ++ci)
      for (int kz = 0; kz < k; ++kz)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            float acc = 0.0f;
            for (std::int64_t n = 0; n < ys[0]; ++n)
              for (std::int64_t zo = 0; zo < ys[2]; ++zo)
                for (std::int64_t yo = 0; yo < ys[3]; ++yo)
                  for (std::int64_t xo = 0; xo < ys[4]; ++xo) {
                    const std::int64_t z = zo * stride + kz - padding;
                    const std::int64_t yy = yo * stride + ky - padding;
                    const std::int64_t xx = xo * stride + kx - padding;
                    if (z < 0 || z >= xs[2] || yy < 0 || yy >= xs[3] ||
                        xx < 0 || xx >= xs[4])
                      continue;
                    acc += dy[std::size_t(at5(n, co, zo, yo, xo, ys))] *
                           x[std::size_t(at5(n, ci, z, yy, xx, xs))];
                  }
            dw[std::size_t((((co * Ci + ci) * k + kz) * k + ky) * k + kx)] = acc;
          }
  return dw;
}

std::vector<float> conv_transpose3d_forward(const std::vector<float>& x,
                                            const std::int64_t xs[5],
                                            const std::vector<float>& w,
                                            const std::vector<float>& b,
                                            std::int64_t co_count) {
  const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const std::int64_t ys[5] = {N, co_count, 2 * D, 2 * H, 2 * W};
  std::vector<float> y(std::size_t(N * co_count * 8 * D * H * W));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < co_count; ++co)
      for (std::int64_t zo = 0; zo < 2 * D; ++zo)
        for (std::int64_t yo = 0; yo < 2 * H; ++yo)
          for (std::int64_t xo = 0; xo < 2 * W; ++xo) {
            float acc = b[std::size_t(co)];
            for (std::int64_t ci = 0; ci < Ci; ++ci)
              acc += x[std::size_t(at5(n, ci, zo / 2, yo / 2, xo / 2, xs))] *
                     w[std::size_t((((ci * co_count + co) * 2 + (zo & 1)) * 2 +
                                    (yo & 1)) *
                                       2 +
                                   (xo & 1))];
            y[std::size_t(at5(n, co, zo, yo, xo, ys))] = acc;
          }
  return y;
}

void batchnorm_stats(const std::vector<float>& x, const std::int64_t xs[5],
                     std::vector<float>& mean, std::vector<float>& var) {
  const std::int64_t N = xs[0], C = xs[1], plane = xs[2] * xs[3] * xs[4];
  const std::int64_t M = N * plane;
  mean.assign(std::size_t(C), 0.0f);
  var.assign(std::size_t(C), 0.0f);
  for (std::int64_t c = 0; c < C; ++c) {
    float s = 0.0f;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < plane; ++i)
        s += x[std::size_t((n * C + c) * plane + i)];
    const float mu = s / float(M);
    float v = 0.0f;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < plane; ++i) {
        const float d = x[std::size_t((n * C + c) * plane + i)] - mu;
        v += d * d;
      }
    mean[std::size_t(c)] = mu;
    var[std::size_t(c)] = v / float(M);
  }
}

ScalarVolume resample_linear(const ScalarVolume& v, const ImageGeometry& target) {
  ScalarVolume out(target);
  const ImageGeometry& sg = v.geom;
  auto clamp = [](double u, double hi) { return std::min(std::max(u, 0.0), hi); };
  for (std::int64_t kz = 0; kz < target.size.z; ++kz)
    for (std::int64_t ky = 0; ky < target.size.y; ++ky)
      for (std::int64_t kx = 0; kx < target.size.x; ++kx) {
        const Vec3d wpt = target.voxel_center(kx, ky, kz);
        const double ux = clamp((wpt.x - sg.origin.x) / sg.spacing.x,
                                double(sg.size.x - 1));
        const double uy = clamp((wpt.y - sg.origin.y) / sg.spacing.y,
                                double(sg.size.y - 1));
        const double uz = clamp((wpt.z - sg.origin.z) / sg.spacing.z,
                                double(sg.size.z - 1));
        const std::int64_t x0 = std::min(std::int64_t(ux), sg.size.x - 1);
        const std::int64_t y0 = std::min(std::int64_t(uy), sg.size.y - 1);
        const std::int64_t z0 = std::min(std::int64_t(uz), sg.size.z - 1);
        const std::int64_t x1 = std::min(x0 + 1, sg.size.x - 1);
        const std::int64_t y1 = std::min(y0 + 1, sg.size.y - 1);
        const std::int64_t z1 = std::min(z0 + 1, sg.size.z - 1);
        const double fx = ux - double(x0), fy = uy - double(y0),
                     fz = uz - double(z0);
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                                 (dz ? fz : 1.0 - fz);
              acc += wgt * double(v.at(dx ? x1 : x0, dy ? y1 : y0, dz ? z1 : z0));
            }
        out.at(kx, ky, kz) = float(acc);
      }
  return out;
}

}  // namespace hnseg::reference
