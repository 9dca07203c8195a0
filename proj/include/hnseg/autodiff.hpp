#pragma once

#include <functional>

#include "hnseg/tensor.hpp"

namespace hnseg {

// Reverse-mode tape. Ops append one backward closure per recorded node;
// closures run in reverse creation order, which is a valid reverse
// topological order for a define-by-run graph. A tape can be consumed once.
template <typename T>
class Graph {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  void backward(const Tensor<T>& root) {
    if (!root) throw ArgumentError("backward: null root");
    if (root->numel() != 1)
      throw ArgumentError("backward: root must be a scalar tensor");
    if (used_)
      throw StateError(
          "backward: graph already consumed; build a fresh graph per step");
    used_ = true;
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return used_; }

 private:
  std::vector<std::function<void()>> nodes_;
  bool used_ = false;
};

// All ops take the tape as a nullable pointer: nullptr means inference mode
// (no recording, outputs never require grad). Tensors are [N,C,D,H,W] unless
// stated otherwise.

// Cross-correlation, kernel k in {1,3}, stride in {1,2}, padding = k/2.
// x [N,Cin,D,H,W], w [Cout,Cin,k,k,k], b [Cout].
template <typename T>
Tensor<T> conv3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b, int stride, int padding);

// Kernel 2, stride 2: exact spatial doubling. w [Cin,Cout,2,2,2].
template <typename T>
Tensor<T> conv_transpose3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b);

// Per-channel batch norm over (N,D,H,W). Training mode normalizes with batch
// statistics and updates running stats in place; eval mode uses running stats.
template <typename T>
Tensor<T> batch_norm3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, const Tensor<T>& running_mean,
                       const Tensor<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5));

template <typename T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& x);

template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Graph<T>* g, const Tensor<T>& x, T c);

// Full reduction to a scalar tensor of shape [1].
template <typename T>
Tensor<T> sum(Graph<T>* g, const Tensor<T>& x);

// Softmax over the channel axis of [N,C,D,H,W].
template <typename T>
Tensor<T> softmax_channels(Graph<T>* g, const Tensor<T>& x);

// Picks the lowest-index voxel of each factor^3 block.
template <typename T>
Tensor<T> nearest_downsample(Graph<T>* g, const Tensor<T>& x, int factor);

}  // namespace hnseg
