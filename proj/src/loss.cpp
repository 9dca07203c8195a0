#include "hnseg/loss.hpp"

#include <cmath>

#include "hnseg/exec.hpp"

namespace hnseg {

namespace {

template <typename T>
struct DiceState {
  // per (sample, class) tallies of the softmax probabilities
  std::vector<T> sum_pg, sum_p, sum_g;
};

}  // namespace

template <typename T>
Tensor<T> dice_ce(Graph<T>* g, const Tensor<T>& logits, const LabelPatch& target,
                  const LossConfig& cfg, DiceCeParts<T>* parts) {
  if (!logits) throw ArgumentError("dice_ce: null logits");
  if (logits->shape.size() != 5)
    throw ShapeError("dice_ce: logits must be [N,C,D,H,W]");
  const std::int64_t N = logits->shape[0], C = logits->shape[1];
  const std::int64_t V = logits->shape[2] * logits->shape[3] * logits->shape[4];
  if (target.shape.size() != 4 || target.shape[0] != N ||
      target.shape[1] != logits->shape[2] || target.shape[2] != logits->shape[3] ||
      target.shape[3] != logits->shape[4])
    throw ShapeError("dice_ce: target shape does not match logits");
  if (C > 8) throw ShapeError("dice_ce: more than 8 classes not supported");
  for (const auto l : target.labels)
    if (std::int64_t(l) >= C)
      throw ArgumentError("dice_ce: target label outside the class range");

  const T smooth = T(cfg.dice_smooth);
  const std::int64_t c0 = cfg.include_background ? 0 : 1;
  const std::int64_t n_classes_counted = C - c0;

  // softmax probabilities are cached for the backward pass
  auto probs = std::make_shared<std::vector<T>>(logits->values.size());
  auto state = std::make_shared<DiceState<T>>();
  state->sum_pg.assign(std::size_t(N * C), T(0));
  state->sum_p.assign(std::size_t(N * C), T(0));
  state->sum_g.assign(std::size_t(N * C), T(0));

  const T* xp = logits->values.data();
  T* pp = probs->data();
  const std::uint8_t* tp = target.labels.data();

  std::vector<T> ce_per_sample(std::size_t(N), T(0));
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
  for (std::int64_t n = 0; n < N; ++n) {
    T* spg = state->sum_pg.data() + n * C;
    T* sp = state->sum_p.data() + n * C;
    T* sg = state->sum_g.data() + n * C;
    T ce = T(0);
    for (std::int64_t v = 0; v < V; ++v) {
      const T* px = xp + n * C * V + v;
      T* po = pp + n * C * V + v;
      T m = px[0];
      for (std::int64_t c = 1; c < C; ++c) m = std::max(m, px[c * V]);
      T s = T(0);
      for (std::int64_t c = 0; c < C; ++c) {
        const T e = std::exp(px[c * V] - m);
        po[c * V] = e;
        s += e;
      }
      const T inv = T(1) / s;
      const std::int64_t t = tp[n * V + v];
      // -log softmax at the target class via log-sum-exp, no log(0)
      ce += std::log(s) + m - px[t * V];
      for (std::int64_t c = 0; c < C; ++c) {
        const T p = po[c * V] * inv;
        po[c * V] = p;
        spg[c] += (c == t) ? p : T(0);
        sp[c] += p;
      }
      sg[t] += T(1);
    }
    ce_per_sample[std::size_t(n)] = ce;
  }

  T ce_total = T(0);
  for (const T c : ce_per_sample) ce_total += c;
  const T ce_mean = ce_total / T(N * V);

  T dice_sum = T(0);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = c0; c < C; ++c) {
      const T num = T(2) * state->sum_pg[std::size_t(n * C + c)] + smooth;
      const T den = state->sum_p[std::size_t(n * C + c)] +
                    state->sum_g[std::size_t(n * C + c)] + smooth;
      dice_sum += T(1) - num / den;
    }
  const T dice_mean = dice_sum / T(N * n_classes_counted);

  auto out = make_tensor<T>({1});
  out->values[0] = dice_mean + ce_mean;
  if (parts) {
    parts->dice = dice_mean;
    parts->ce = ce_mean;
  }

  if (g && logits->requires_grad) {
    out->requires_grad = true;
    Tensor<T> lc = logits, oc = out;
    LabelPatch tgt = target;
    g->record([=]() {
      if (oc->grad.empty()) return;
      const T gy = oc->grad[0];
      lc->ensure_grad();
      T* gx = lc->grad.data();
      const T* pv = probs->data();
      const std::uint8_t* tv = tgt.labels.data();
      const T ce_w = gy / T(N * V);
      const T dice_w = gy / T(N * n_classes_counted);
#pragma omp parallel for schedule(static) if (exec::parallel_enabled())
      for (std::int64_t n = 0; n < N; ++n) {
        const T* spg = state->sum_pg.data() + n * C;
        const T* sp = state->sum_p.data() + n * C;
        const T* sg = state->sum_g.data() + n * C;
        // dL_dice/dp_c at this sample: A_c = num/den^2 - 2*g_c/den,
        // with g_c the one-hot value folded in per voxel below.
        std::vector<T> inv_den(static_cast<std::size_t>(C));
        std::vector<T> num_den2(static_cast<std::size_t>(C));
        for (std::int64_t c = 0; c < C; ++c) {
          const T num = T(2) * spg[c] + smooth;
          const T den = sp[c] + sg[c] + smooth;
          inv_den[std::size_t(c)] = T(1) / den;
          num_den2[std::size_t(c)] = num / (den * den);
        }
        for (std::int64_t v = 0; v < V; ++v) {
          const T* p = pv + n * C * V + v;
          T* gout = gx + n * C * V + v;
          const std::int64_t t = tv[n * V + v];
          // CE part: p - onehot
          // Dice part: chain through softmax, dL/dz_k = p_k (A_k - sum_c A_c p_c)
          T dot = T(0);
          T a[8];  // C <= 8 in practice; guarded below
          for (std::int64_t c = 0; c < C; ++c) {
            T ac = T(0);
            if (c >= c0)
              ac = dice_w * (num_den2[std::size_t(c)] -
                             ((c == t) ? T(2) * inv_den[std::size_t(c)] : T(0)));
            a[c] = ac;
            dot += ac * p[c * V];
          }
          for (std::int64_t c = 0; c < C; ++c) {
            const T pc = p[c * V];
            gout[c * V] += pc * (a[c] - dot) + ce_w * (pc - ((c == t) ? T(1) : T(0)));
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> deep_supervision_loss(Graph<T>* g, const std::vector<Tensor<T>>& preds,
                                const LabelPatch& target, const LossConfig& cfg,
                                DiceCeParts<T>* parts) {
  if (preds.empty()) throw ArgumentError("deep_supervision_loss: no predictions");
  const auto& full = preds[0]->shape;
  Tensor<T> total;
  DiceCeParts<T> acc{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& s = preds[i]->shape;
    const int factor = 1 << int(i);
    if (s.size() != 5 || s[2] * factor != full[2] || s[3] * factor != full[3] ||
        s[4] * factor != full[4])
      throw ShapeError("deep_supervision_loss: level " + std::to_string(i) +
                       " is not full/2^i");
    const LabelPatch tgt_i =
        (factor == 1) ? target : nearest_downsample(target, factor);
    DiceCeParts<T> parts_i{};
    Tensor<T> li = dice_ce(g, preds[i], tgt_i, cfg, &parts_i);
    const T w = T(1) / T(1 << int(i));
    acc.dice += w * parts_i.dice;
    acc.ce += w * parts_i.ce;
    Tensor<T> wi = scale(g, li, w);
    total = total ? add(g, total, wi) : wi;
  }
  if (parts) *parts = acc;
  return total;
}

template Tensor<float> dice_ce<float>(Graph<float>*, const Tensor<float>&,
                                      const LabelPatch&, const LossConfig&,
                                      DiceCeParts<float>*);
template Tensor<double> dice_ce<double>(Graph<double>*, const Tensor<double>&,
                                        const LabelPatch&, const LossConfig&,
                                        DiceCeParts<double>*);
template Tensor<float> deep_supervision_loss<float>(Graph<float>*,
                                                    const std::vector<Tensor<float>>&,
                                                    const LabelPatch&,
                                                    const LossConfig&,
                                                    DiceCeParts<float>*);
template Tensor<double> deep_supervision_loss<double>(
    Graph<double>*, const std::vector<Tensor<double>>&, const LabelPatch&,
    const LossConfig&, DiceCeParts<double>*);

}  // namespace hnseg
