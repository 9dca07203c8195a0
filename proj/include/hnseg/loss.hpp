#pragma once

#include "hnseg/autodiff.hpp"

namespace hnseg {

struct LossConfig {
  double dice_smooth = 1e-5;
  bool include_background = true;

  bool operator==(const LossConfig&) const = default;
};

// Per-term values of the last dice_ce evaluation, for logging.
template <typename T>
struct DiceCeParts {
  T dice = T(0);
  T ce = T(0);
};

// Soft Dice loss + cross entropy. Dice is computed per sample and per class
// (background included by default) with the smoothing constant in numerator
// and denominator, then averaged; CE is the mean over voxels of -log softmax
// at the target class. Differentiable w.r.t. logits.
// logits [N,C,D,H,W], target [N,D,H,W] with values < C.
template <typename T>
Tensor<T> dice_ce(Graph<T>* g, const Tensor<T>& logits, const LabelPatch& target,
                  const LossConfig& cfg, DiceCeParts<T>* parts = nullptr);

// sum_i 2^-i * dice_ce(preds[i], target downsampled by 2^i). preds[i] must
// have spatial size full/2^i; targets are downsized with nearest neighbor.
template <typename T>
Tensor<T> deep_supervision_loss(Graph<T>* g, const std::vector<Tensor<T>>& preds,
                                const LabelPatch& target, const LossConfig& cfg,
                                DiceCeParts<T>* parts = nullptr);

inline std::vector<double> deep_supervision_weights(int levels) {
  std::vector<double> w(static_cast<std::size_t>(levels));
  for (int i = 0; i < levels; ++i) w[std::size_t(i)] = 1.0 / double(1 << i);
  return w;
}

}  // namespace hnseg
