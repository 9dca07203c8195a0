#pragma once

#include <cstdint>
#include <vector>

#include "hnseg/tensor.hpp"

namespace hnseg {

// AdamW with decoupled weight decay: the decay step p <- p - lr*wd*p is
// applied separately from the moment-based update.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, T weight_decay, T beta1 = T(0.9),
        T beta2 = T(0.999), T eps = T(1e-8));

  // Throws StateError when a parameter has no gradient buffer.
  void step(T lr);

  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void restore(std::uint64_t step, std::vector<std::vector<T>> m,
               std::vector<std::vector<T>> v);
  std::size_t param_count() const { return params_.size(); }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  T wd_, beta1_, beta2_, eps_;
  std::uint64_t step_ = 0;
};

// lr0 * 0.5 * (1 + cos(pi * epoch / total)); lr(0) = lr0, lr(total) = 0.
double cosine_lr(int epoch, int total_epochs, double lr0);

}  // namespace hnseg
