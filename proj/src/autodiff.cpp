#include "hnseg/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "hnseg/exec.hpp"

namespace hnseg {

namespace {

template <typename T>
void require(bool ok, const char* msg) {
  if (!ok) throw ShapeError(msg);
}

inline std::int64_t idx5(std::int64_t n, std::int64_t c, std::int64_t z,
                         std::int64_t y, std::int64_t x, std::int64_t C,
                         std::int64_t D, std::int64_t H, std::int64_t W) {
  return (((n * C + c) * D + z) * H + y) * W + x;
}

template <typename T>
bool wants_grad(Graph<T>* g, std::initializer_list<Tensor<T>> ins) {
  if (!g) return false;
  for (const auto& t : ins)
    if (t && t->requires_grad) return true;
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b, int stride, int padding) {
  require<T>(x && w && b, "conv3d: null input");
  require<T>(x->shape.size() == 5, "conv3d: input must be [N,C,D,H,W]");
  require<T>(w->shape.size() == 5, "conv3d: weight must be [Co,Ci,k,k,k]");
  const std::int64_t N = x->shape[0], Ci = x->shape[1], D = x->shape[2],
                     H = x->shape[3], W = x->shape[4];
  const std::int64_t Co = w->shape[0];
  const int k = int(w->shape[2]);
  require<T>(w->shape[1] == Ci, "conv3d: channel mismatch between input and weight");
  require<T>(w->shape[3] == k && w->shape[4] == k, "conv3d: kernel must be cubic");
  require<T>(k == 1 || k == 3, "conv3d: kernel size must be 1 or 3");
  require<T>(stride == 1 || stride == 2, "conv3d: stride must be 1 or 2");
  require<T>(padding == k / 2, "conv3d: padding must equal k/2");
  require<T>(b->shape.size() == 1 && b->shape[0] == Co, "conv3d: bias must be [Co]");

  const std::int64_t Do = (D + 2 * padding - k) / stride + 1;
  const std::int64_t Ho = (H + 2 * padding - k) / stride + 1;
  const std::int64_t Wo = (W + 2 * padding - k) / stride + 1;
  require<T>(Do >= 1 && Ho >= 1 && Wo >= 1, "conv3d: output would be empty");

  auto out = make_tensor<T>({N, Co, Do, Ho, Wo});
  const T* xp = x->values.data();
  const T* wp = w->values.data();
  const T* bp = b->values.data();
  T* op = out->values.data();
  const int p = padding, s = stride;

  // One output plane at a time: gather the receptive-field columns, then a
  // small GEMM over them. Contributions accumulate in (ci,kz,ky,kx) order per
  // output element, the same order as the naive formulation.
  const std::int64_t K = Ci * k * k * k;
  const std::int64_t M = Ho * Wo;
#pragma omp parallel if (exec::parallel_enabled())
  {
    std::vector<T> col(std::size_t(K * M));
#pragma omp for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t zo = 0; zo < Do; ++zo) {
        T* cp = col.data();
        for (std::int64_t ci = 0; ci < Ci; ++ci)
          for (int kz = 0; kz < k; ++kz) {
            const std::int64_t z = zo * s + kz - p;
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                T* crow = cp + ((((ci * k + kz) * k + ky) * k) + kx) * M;
                if (z < 0 || z >= D) {
                  std::fill(crow, crow + M, T(0));
                  continue;
                }
                for (std::int64_t yo = 0; yo < Ho; ++yo) {
                  const std::int64_t y = yo * s + ky - p;
                  T* cdst = crow + yo * Wo;
                  if (y < 0 || y >= H) {
                    std::fill(cdst, cdst + Wo, T(0));
                    continue;
                  }
                  const T* xrow = xp + idx5(n, ci, z, y, 0, Ci, D, H, W);
                  const std::int64_t base = kx - p;
                  std::int64_t lo = 0;
                  while (lo < Wo && lo * s + base < 0) ++lo;
                  std::int64_t hi = Wo;
                  while (hi > lo && (hi - 1) * s + base >= W) --hi;
                  for (std::int64_t xo = 0; xo < lo; ++xo) cdst[xo] = T(0);
                  for (std::int64_t xo = lo; xo < hi; ++xo)
                    cdst[xo] = xrow[xo * s + base];
                  for (std::int64_t xo = hi; xo < Wo; ++xo) cdst[xo] = T(0);
                }
              }
          }
        for (std::int64_t co = 0; co < Co; ++co) {
          T* orow = op + idx5(n, co, zo, 0, 0, Co, Do, Ho, Wo);
          const T bias = bp[co];
          for (std::int64_t m = 0; m < M; ++m) orow[m] = bias;
          const T* wrow = wp + co * K;
          for (std::int64_t kk = 0; kk < K; ++kk) {
            const T wv = wrow[kk];
            const T* crow = cp + kk * M;
            for (std::int64_t m = 0; m < M; ++m) orow[m] += wv * crow[m];
          }
        }
      }
    }
  }

  if (wants_grad(g, {x, w, b})) {
    out->requires_grad = true;
    Tensor<T> xc = x, wc = w, bc = b, oc = out;
    g->record([=]() {
      if (oc->grad.empty()) return;
      const T* gy = oc->grad.data();
      if (xc->requires_grad) {
        xc->ensure_grad();
        T* gx = xc->grad.data();
        const T* wv = wc->values.data();
        // scatter formulation: each (n,ci) block is owned by one iteration,
        // and for any input element the (co,kz,ky,kx) contributions arrive in
        // the same order as the naive gather, so results stay deterministic.
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
        for (std::int64_t n = 0; n < N; ++n) {
          for (std::int64_t ci = 0; ci < Ci; ++ci) {
            for (std::int64_t co = 0; co < Co; ++co)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const T wval =
                        wv[(((co * Ci + ci) * k + kz) * k + ky) * k + kx];
                    for (std::int64_t zo = 0; zo < Do; ++zo) {
                      const std::int64_t z = zo * s + kz - p;
                      if (z < 0 || z >= D) continue;
                      for (std::int64_t yo = 0; yo < Ho; ++yo) {
                        const std::int64_t y = yo * s + ky - p;
                        if (y < 0 || y >= H) continue;
                        const T* grow =
                            gy + idx5(n, co, zo, yo, 0, Co, Do, Ho, Wo);
                        T* xrow = gx + idx5(n, ci, z, y, 0, Ci, D, H, W);
                        const std::int64_t base = kx - p;
                        std::int64_t lo = 0;
                        while (lo < Wo && lo * s + base < 0) ++lo;
                        std::int64_t hi = Wo;
                        while (hi > lo && (hi - 1) * s + base >= W) --hi;
                        for (std::int64_t xo = lo; xo < hi; ++xo)
                          xrow[xo * s + base] += wval * grow[xo];
                      }
                    }
                  }
          }
        }
      }
      if (wc->requires_grad) {
        wc->ensure_grad();
        T* gw = wc->grad.data();
        const T* xv = xc->values.data();
        const std::int64_t nw = Co * Ci * k * k * k;
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
        for (std::int64_t wi = 0; wi < nw; ++wi) {
          const int kx = int(wi % k), ky = int((wi / k) % k),
                    kz = int((wi / (k * k)) % k);
          const std::int64_t ci = (wi / (k * k * k)) % Ci;
          const std::int64_t co = wi / (k * k * k * Ci);
          // four fixed partials per row; order is deterministic
          T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t zo = 0; zo < Do; ++zo) {
              const std::int64_t z = zo * s + kz - p;
              if (z < 0 || z >= D) continue;
              for (std::int64_t yo = 0; yo < Ho; ++yo) {
                const std::int64_t y = yo * s + ky - p;
                if (y < 0 || y >= H) continue;
                const T* xrow = xv + idx5(n, ci, z, y, 0, Ci, D, H, W);
                const T* grow = gy + idx5(n, co, zo, yo, 0, Co, Do, Ho, Wo);
                const std::int64_t base = kx - p;
                std::int64_t lo = 0;
                while (lo < Wo && lo * s + base < 0) ++lo;
                std::int64_t hi = Wo;
                while (hi > lo && (hi - 1) * s + base >= W) --hi;
                std::int64_t xo = lo;
                for (; xo + 4 <= hi; xo += 4) {
                  a0 += grow[xo] * xrow[xo * s + base];
                  a1 += grow[xo + 1] * xrow[(xo + 1) * s + base];
                  a2 += grow[xo + 2] * xrow[(xo + 2) * s + base];
                  a3 += grow[xo + 3] * xrow[(xo + 3) * s + base];
                }
                for (; xo < hi; ++xo) a0 += grow[xo] * xrow[xo * s + base];
              }
            }
          gw[wi] += ((a0 + a1) + (a2 + a3));
        }
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        T* gb = bc->grad.data();
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
        for (std::int64_t co = 0; co < Co; ++co) {
          T acc = T(0);
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t zo = 0; zo < Do; ++zo)
              for (std::int64_t yo = 0; yo < Ho; ++yo) {
                const T* grow = gy + idx5(n, co, zo, yo, 0, Co, Do, Ho, Wo);
                for (std::int64_t xo = 0; xo < Wo; ++xo) acc += grow[xo];
              }
          gb[co] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv_transpose3d (kernel 2, stride 2)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv_transpose3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b) {
  require<T>(x && w && b, "conv_transpose3d: null input");
  require<T>(x->shape.size() == 5, "conv_transpose3d: input must be [N,C,D,H,W]");
  require<T>(w->shape.size() == 5 && w->shape[2] == 2 && w->shape[3] == 2 &&
                 w->shape[4] == 2,
             "conv_transpose3d: weight must be [Ci,Co,2,2,2]");
  const std::int64_t N = x->shape[0], Ci = x->shape[1], D = x->shape[2],
                     H = x->shape[3], W = x->shape[4];
  require<T>(w->shape[0] == Ci, "conv_transpose3d: channel mismatch");
  const std::int64_t Co = w->shape[1];
  require<T>(b->shape.size() == 1 && b->shape[0] == Co,
             "conv_transpose3d: bias must be [Co]");
  const std::int64_t Do = 2 * D, Ho = 2 * H, Wo = 2 * W;

  auto out = make_tensor<T>({N, Co, Do, Ho, Wo});
  const T* xp = x->values.data();
  const T* wp = w->values.data();
  const T* bp = b->values.data();
  T* op = out->values.data();

  // Each output voxel draws from exactly one input voxel, so forward is a
  // gather and stays deterministic under the parallel decomposition.
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t co = 0; co < Co; ++co) {
      for (std::int64_t zo = 0; zo < Do; ++zo) {
        const std::int64_t zi = zo / 2;
        const int kz = int(zo & 1);
        for (std::int64_t yo = 0; yo < Ho; ++yo) {
          const std::int64_t yi = yo / 2;
          const int ky = int(yo & 1);
          T* orow = op + idx5(n, co, zo, yo, 0, Co, Do, Ho, Wo);
          for (std::int64_t xo = 0; xo < Wo; ++xo) {
            const std::int64_t xi = xo / 2;
            const int kx = int(xo & 1);
            T acc = bp[co];
            for (std::int64_t ci = 0; ci < Ci; ++ci)
              acc += xp[idx5(n, ci, zi, yi, xi, Ci, D, H, W)] *
                     wp[(((ci * Co + co) * 2 + kz) * 2 + ky) * 2 + kx];
            orow[xo] = acc;
          }
        }
      }
    }
  }

  if (wants_grad(g, {x, w, b})) {
    out->requires_grad = true;
    Tensor<T> xc = x, wc = w, bc = b, oc = out;
    g->record([=]() {
      if (oc->grad.empty()) return;
      const T* gy = oc->grad.data();
      if (xc->requires_grad) {
        xc->ensure_grad();
        T* gx = xc->grad.data();
        const T* wv = wc->values.data();
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
        for (std::int64_t n = 0; n < N; ++n) {
          for (std::int64_t ci = 0; ci < Ci; ++ci) {
            for (std::int64_t zi = 0; zi < D; ++zi)
              for (std::int64_t yi = 0; yi < H; ++yi)
                for (std::int64_t xi = 0; xi < W; ++xi) {
                  T acc = T(0);
                  for (std::int64_t co = 0; co < Co; ++co)
                    for (int kz = 0; kz < 2; ++kz)
                      for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx)
                          acc += gy[idx5(n, co, 2 * zi + kz, 2 * yi + ky,
                                         2 * xi + kx, Co, Do, Ho, Wo)] *
                                 wv[(((ci * Co + co) * 2 + kz) * 2 + ky) * 2 + kx];
                  gx[idx5(n, ci, zi, yi, xi, Ci, D, H, W)] += acc;
                }
          }
        }
      }
      if (wc->requires_grad) {
        wc->ensure_grad();
        T* gw = wc->grad.data();
        const T* xv = xc->values.data();
        const std::int64_t nw = Ci * Co * 8;
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
        for (std::int64_t wi = 0; wi < nw; ++wi) {
          const int kx = int(wi % 2), ky = int((wi / 2) % 2),
                    kz = int((wi / 4) % 2);
          const std::int64_t co = (wi / 8) % Co;
          const std::int64_t ci = wi / (8 * Co);
          T acc = T(0);
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t zi = 0; zi < D; ++zi)
              for (std::int64_t yi = 0; yi < H; ++yi)
                for (std::int64_t xi = 0; xi < W; ++xi)
                  acc += xv[idx5(n, ci, zi, yi, xi, Ci, D, H, W)] *
                         gy[idx5(n, co, 2 * zi + kz, 2 * yi + ky, 2 * xi + kx,
                                 Co, Do, Ho, Wo)];
          gw[wi] += acc;
        }
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        T* gb = bc->grad.data();
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
        for (std::int64_t co = 0; co < Co; ++co) {
          T acc = T(0);
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t zo = 0; zo < Do; ++zo)
              for (std::int64_t yo = 0; yo < Ho; ++yo) {
                const T* grow = gy + idx5(n, co, zo, yo, 0, Co, Do, Ho, Wo);
                for (std::int64_t xo = 0; xo < Wo; ++xo) acc += grow[xo];
              }
          gb[co] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, const Tensor<T>& running_mean,
                       const Tensor<T>& running_var, bool training, T momentum,
                       T eps) {
  require<T>(x && gamma && beta && running_mean && running_var,
             "batch_norm3d: null input");
  require<T>(x->shape.size() == 5, "batch_norm3d: input must be [N,C,D,H,W]");
  const std::int64_t N = x->shape[0], C = x->shape[1], D = x->shape[2],
                     H = x->shape[3], W = x->shape[4];
  require<T>(gamma->shape.size() == 1 && gamma->shape[0] == C &&
                 beta->shape[0] == C && running_mean->shape[0] == C &&
                 running_var->shape[0] == C,
             "batch_norm3d: per-channel parameter shape mismatch");
  const std::int64_t M = N * D * H * W;
  const std::int64_t plane = D * H * W;

  auto out = make_tensor<T>(x->shape);
  std::vector<T> mean(C), invstd(C);

  const T* xp = x->values.data();
  if (training) {
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
    for (std::int64_t c = 0; c < C; ++c) {
      T s = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* px = xp + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += px[i];
      }
      const T mu = s / T(M);
      T v = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* px = xp + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = px[i] - mu;
          v += d * d;
        }
      }
      v /= T(M);
      mean[c] = mu;
      invstd[c] = T(1) / std::sqrt(v + eps);
      running_mean->values[c] =
          (T(1) - momentum) * running_mean->values[c] + momentum * mu;
      running_var->values[c] =
          (T(1) - momentum) * running_var->values[c] + momentum * v;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean->values[c];
      invstd[c] = T(1) / std::sqrt(running_var->values[c] + eps);
    }
  }

  T* op = out->values.data();
  const T* gm = gamma->values.data();
  const T* bt = beta->values.data();
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* px = xp + (n * C + c) * plane;
      T* po = op + (n * C + c) * plane;
      const T mu = mean[c], is = invstd[c], ga = gm[c], be = bt[c];
      for (std::int64_t i = 0; i < plane; ++i)
        po[i] = (px[i] - mu) * is * ga + be;
    }

  if (wants_grad(g, {x, gamma, beta})) {
    out->requires_grad = true;
    Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
    const bool train_mode = training;
    g->record([=, mean = std::move(mean), invstd = std::move(invstd)]() {
      if (oc->grad.empty()) return;
      const T* gy = oc->grad.data();
      const T* xv = xc->values.data();
      std::vector<T> sum_dy(C), sum_dy_xhat(C);
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
      for (std::int64_t c = 0; c < C; ++c) {
        T s1 = T(0), s2 = T(0);
        const T mu = mean[c], is = invstd[c];
        for (std::int64_t n = 0; n < N; ++n) {
          const T* py = gy + (n * C + c) * plane;
          const T* px = xv + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            s1 += py[i];
            s2 += py[i] * (px[i] - mu) * is;
          }
        }
        sum_dy[c] = s1;
        sum_dy_xhat[c] = s2;
      }
      if (gc->requires_grad) {
        gc->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) gc->grad[c] += sum_dy_xhat[c];
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) bc->grad[c] += sum_dy[c];
      }
      if (xc->requires_grad) {
        xc->ensure_grad();
        T* gx = xc->grad.data();
        const T* gmv = gc->values.data();
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t c = 0; c < C; ++c) {
            const T mu = mean[c], is = invstd[c], ga = gmv[c];
            const T m1 = sum_dy[c] / T(M), m2 = sum_dy_xhat[c] / T(M);
            const T* py = gy + (n * C + c) * plane;
            const T* px = xv + (n * C + c) * plane;
            T* pg = gx + (n * C + c) * plane;
            if (train_mode) {
              for (std::int64_t i = 0; i < plane; ++i) {
                const T xhat = (px[i] - mu) * is;
                pg[i] += ga * is * (py[i] - m1 - xhat * m2);
              }
            } else {
              for (std::int64_t i = 0; i < plane; ++i) pg[i] += ga * is * py[i];
            }
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& x) {
  require<T>(bool(x), "relu: null input");
  auto out = make_tensor<T>(x->shape);
  const std::int64_t n = x->numel();
  const T* xp = x->values.data();
  T* op = out->values.data();
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  if (wants_grad(g, {x})) {
    out->requires_grad = true;
    Tensor<T> xc = x, oc = out;
    g->record([=]() {
      if (oc->grad.empty() || !xc->requires_grad) return;
      xc->ensure_grad();
      const T* gy = oc->grad.data();
      const T* xv = xc->values.data();
      T* gx = xc->grad.data();
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
      for (std::int64_t i = 0; i < n; ++i)
        if (xv[i] > T(0)) gx[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  require<T>(a && b, "add: null input");
  require<T>(a->shape == b->shape, "add: shape mismatch");
  auto out = make_tensor<T>(a->shape);
  const std::int64_t n = a->numel();
  const T* ap = a->values.data();
  const T* bp = b->values.data();
  T* op = out->values.data();
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
  if (wants_grad(g, {a, b})) {
    out->requires_grad = true;
    Tensor<T> ac = a, bc = b, oc = out;
    g->record([=]() {
      if (oc->grad.empty()) return;
      const T* gy = oc->grad.data();
      for (const auto& t : {ac, bc}) {
        if (!t->requires_grad) continue;
        t->ensure_grad();
        T* gp = t->grad.data();
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
        for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  require<T>(a && b, "mul: null input");
  require<T>(a->shape == b->shape, "mul: shape mismatch");
  auto out = make_tensor<T>(a->shape);
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i)
    out->values[i] = a->values[i] * b->values[i];
  if (wants_grad(g, {a, b})) {
    out->requires_grad = true;
    Tensor<T> ac = a, bc = b, oc = out;
    g->record([=]() {
      if (oc->grad.empty()) return;
      const T* gy = oc->grad.data();
      if (ac->requires_grad) {
        ac->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          ac->grad[i] += gy[i] * bc->values[i];
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          bc->grad[i] += gy[i] * ac->values[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>* g, const Tensor<T>& x, T c) {
  require<T>(bool(x), "scale: null input");
  auto out = make_tensor<T>(x->shape);
  const std::int64_t n = x->numel();
  for (std::int64_t i = 0; i < n; ++i) out->values[i] = c * x->values[i];
  if (wants_grad(g, {x})) {
    out->requires_grad = true;
    Tensor<T> xc = x, oc = out;
    g->record([=]() {
      if (oc->grad.empty() || !xc->requires_grad) return;
      xc->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) xc->grad[i] += c * oc->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Graph<T>* g, const Tensor<T>& x) {
  require<T>(bool(x), "sum: null input");
  auto out = make_tensor<T>({1});
  T s = T(0);
  for (const T v : x->values) s += v;
  out->values[0] = s;
  if (wants_grad(g, {x})) {
    out->requires_grad = true;
    Tensor<T> xc = x, oc = out;
    g->record([=]() {
      if (oc->grad.empty() || !xc->requires_grad) return;
      xc->ensure_grad();
      const T gy = oc->grad[0];
      for (auto& gv : xc->grad) gv += gy;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_channels(Graph<T>* g, const Tensor<T>& x) {
  require<T>(bool(x), "softmax_channels: null input");
  require<T>(x->shape.size() == 5, "softmax_channels: input must be [N,C,D,H,W]");
  const std::int64_t N = x->shape[0], C = x->shape[1];
  const std::int64_t V = x->shape[2] * x->shape[3] * x->shape[4];
  auto out = make_tensor<T>(x->shape);
  const T* xp = x->values.data();
  T* op = out->values.data();
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t v = 0; v < V; ++v) {
      const T* px = xp + n * C * V + v;
      T* po = op + n * C * V + v;
      T m = px[0];
      for (std::int64_t c = 1; c < C; ++c) m = std::max(m, px[c * V]);
      T s = T(0);
      for (std::int64_t c = 0; c < C; ++c) {
        const T e = std::exp(px[c * V] - m);
        po[c * V] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::int64_t c = 0; c < C; ++c) po[c * V] *= inv;
    }
  if (wants_grad(g, {x})) {
    out->requires_grad = true;
    Tensor<T> xc = x, oc = out;
    g->record([=]() {
      if (oc->grad.empty() || !xc->requires_grad) return;
      xc->ensure_grad();
      const T* gy = oc->grad.data();
      const T* pv = oc->values.data();
      T* gx = xc->grad.data();
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t v = 0; v < V; ++v) {
          const T* pp = pv + n * C * V + v;
          const T* pg = gy + n * C * V + v;
          T dot = T(0);
          for (std::int64_t c = 0; c < C; ++c) dot += pg[c * V] * pp[c * V];
          T* px = gx + n * C * V + v;
          for (std::int64_t c = 0; c < C; ++c)
            px[c * V] += pp[c * V] * (pg[c * V] - dot);
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> nearest_downsample(Graph<T>* g, const Tensor<T>& x, int factor) {
  require<T>(bool(x), "nearest_downsample: null input");
  require<T>(x->shape.size() == 5, "nearest_downsample: input must be [N,C,D,H,W]");
  require<T>(factor >= 1 && (factor & (factor - 1)) == 0,
             "nearest_downsample: factor must be a power of 2");
  const std::int64_t N = x->shape[0], C = x->shape[1], D = x->shape[2],
                     H = x->shape[3], W = x->shape[4];
  require<T>(D % factor == 0 && H % factor == 0 && W % factor == 0,
             "nearest_downsample: dims must be divisible by factor");
  const std::int64_t Do = D / factor, Ho = H / factor, Wo = W / factor;
  auto out = make_tensor<T>({N, C, Do, Ho, Wo});
  const T* xp = x->values.data();
  T* op = out->values.data();
#pragma omp parallel for collapse(2) schedule(static) if (exec::parallel_enabled())
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t z = 0; z < Do; ++z)
        for (std::int64_t y = 0; y < Ho; ++y)
          for (std::int64_t xx = 0; xx < Wo; ++xx)
            op[idx5(n, c, z, y, xx, C, Do, Ho, Wo)] =
                xp[idx5(n, c, z * factor, y * factor, xx * factor, C, D, H, W)];
  if (wants_grad(g, {x})) {
    out->requires_grad = true;
    Tensor<T> xc = x, oc = out;
    g->record([=]() {
      if (oc->grad.empty() || !xc->requires_grad) return;
      xc->ensure_grad();
      const T* gy = oc->grad.data();
      T* gx = xc->grad.data();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t z = 0; z < Do; ++z)
            for (std::int64_t y = 0; y < Ho; ++y)
              for (std::int64_t xx = 0; xx < Wo; ++xx)
                gx[idx5(n, c, z * factor, y * factor, xx * factor, C, D, H, W)] +=
                    gy[idx5(n, c, z, y, xx, C, Do, Ho, Wo)];
    });
  }
  return out;
}

LabelPatch nearest_downsample(const LabelPatch& p, int factor) {
  if (p.shape.size() != 4)
    throw ShapeError("nearest_downsample: label patch must be [N,D,H,W]");
  if (factor < 1 || (factor & (factor - 1)) != 0)
    throw ShapeError("nearest_downsample: factor must be a power of 2");
  const std::int64_t N = p.shape[0], D = p.shape[1], H = p.shape[2],
                     W = p.shape[3];
  if (D % factor || H % factor || W % factor)
    throw ShapeError("nearest_downsample: dims must be divisible by factor");
  LabelPatch out;
  out.shape = {N, D / factor, H / factor, W / factor};
  out.labels.resize(std::size_t(shape_numel(out.shape)));
  const std::int64_t Do = D / factor, Ho = H / factor, Wo = W / factor;
  std::size_t o = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t z = 0; z < Do; ++z)
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t xx = 0; xx < Wo; ++xx)
          out.labels[o++] = p.labels[std::size_t(
              ((n * D + z * factor) * H + y * factor) * W + xx * factor)];
  return out;
}

// Explicit instantiations: float32 is the production mode, float64 is the
// verification mode used by the gradient-check suite.
#define HNSEG_INSTANTIATE(T)                                                   \
  template Tensor<T> conv3d<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&, \
                               const Tensor<T>&, int, int);                    \
  template Tensor<T> conv_transpose3d<T>(Graph<T>*, const Tensor<T>&,         \
                                         const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> batch_norm3d<T>(Graph<T>*, const Tensor<T>&,             \
                                     const Tensor<T>&, const Tensor<T>&,      \
                                     const Tensor<T>&, const Tensor<T>&,      \
                                     bool, T, T);                              \
  template Tensor<T> relu<T>(Graph<T>*, const Tensor<T>&);                    \
  template Tensor<T> add<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> mul<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> scale<T>(Graph<T>*, const Tensor<T>&, T);                \
  template Tensor<T> sum<T>(Graph<T>*, const Tensor<T>&);                     \
  template Tensor<T> softmax_channels<T>(Graph<T>*, const Tensor<T>&);        \
  template Tensor<T> nearest_downsample<T>(Graph<T>*, const Tensor<T>&, int);

HNSEG_INSTANTIATE(float)
HNSEG_INSTANTIATE(double)
#undef HNSEG_INSTANTIATE

}  // namespace hnseg
