#include "hnseg/optim.hpp"

#include <cmath>

#include "hnseg/exec.hpp"

namespace hnseg {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, T weight_decay, T beta1, T beta2,
                T eps)
    : params_(std::move(params)),
      wd_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p) throw ArgumentError("adamw: null parameter");
    m_.emplace_back(p->values.size(), T(0));
    v_.emplace_back(p->values.size(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(T lr) {
  for (const auto& p : params_)
    if (p->grad.empty())
      throw StateError("adamw: parameter has no gradient; run backward first");
  ++step_;
  const T bc1 = T(1) - std::pow(beta1_, T(step_));
  const T bc2 = T(1) - std::pow(beta2_, T(step_));
  const std::int64_t np = std::int64_t(params_.size());
#pragma omp parallel for schedule(dynamic) if (exec::parallel_enabled())
  for (std::int64_t pi = 0; pi < np; ++pi) {
    auto& p = params_[std::size_t(pi)]->values;
    const auto& grad = params_[std::size_t(pi)]->grad;
    auto& m = m_[std::size_t(pi)];
    auto& v = v_[std::size_t(pi)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= lr * wd_ * p[i];
      const T gv = grad[i];
      m[i] = beta1_ * m[i] + (T(1) - beta1_) * gv;
      v[i] = beta2_ * v[i] + (T(1) - beta2_) * gv * gv;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
void AdamW<T>::restore(std::uint64_t step, std::vector<std::vector<T>> m,
                       std::vector<std::vector<T>> v) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw StateError("adamw: restored state has wrong parameter count");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (m[i].size() != params_[i]->values.size() ||
        v[i].size() != params_[i]->values.size())
      throw StateError("adamw: restored moment shape mismatch");
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

double cosine_lr(int epoch, int total_epochs, double lr0) {
  if (total_epochs < 1) throw ArgumentError("cosine_lr: total_epochs must be >= 1");
  if (epoch < 0 || epoch > total_epochs)
    throw ArgumentError("cosine_lr: epoch out of [0, total]");
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * double(epoch) / double(total_epochs)));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace hnseg
