#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hnseg/errors.hpp"

namespace hnseg {

inline std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// Dense N-d array with an optional gradient buffer. Ops hand around
// shared_ptr handles so the tape can keep intermediates alive.
template <typename T>
struct TensorImpl {
  std::vector<std::int64_t> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until ensure_grad(); zero-filled on alloc
  bool requires_grad = false;

  std::int64_t numel() const { return std::int64_t(values.size()); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
  }

  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
};

template <typename T>
using Tensor = std::shared_ptr<TensorImpl<T>>;

template <typename T>
Tensor<T> make_tensor(std::vector<std::int64_t> shape, bool requires_grad = false) {
  for (auto d : shape)
    if (d < 1) throw ShapeError("tensor: non-positive dimension");
  auto t = std::make_shared<TensorImpl<T>>();
  t->values.assign(std::size_t(shape_numel(shape)), T(0));
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
Tensor<T> make_tensor(std::vector<std::int64_t> shape, std::vector<T> values,
                      bool requires_grad = false) {
  if (shape_numel(shape) != std::int64_t(values.size()))
    throw ShapeError("tensor: value count does not match shape");
  auto t = std::make_shared<TensorImpl<T>>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

// Integer class targets, shape [N, D, H, W]; no gradient ever flows here.
struct LabelPatch {
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> labels;

  std::int64_t numel() const { return std::int64_t(labels.size()); }
};

LabelPatch nearest_downsample(const LabelPatch& p, int factor);

}  // namespace hnseg
