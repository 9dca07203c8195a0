#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "hnseg/autodiff.hpp"
#include "hnseg/rng.hpp"

namespace hnseg {

struct SegResNetConfig {
  int in_channels = 2;
  int out_channels = 3;
  int init_filters = 32;
  std::vector<int> blocks_down = {1, 2, 2, 4, 4, 4};
  int ds_levels = 5;

  bool operator==(const SegResNetConfig&) const = default;

  int stages() const { return int(blocks_down.size()); }
  int spatial_divisor() const { return 1 << (stages() - 1); }
  int width(int stage) const { return init_filters << stage; }

  // Throws ConfigError; a single-stage network has no decoder and is invalid.
  void validate() const;
};

struct ParamSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  enum Init { KaimingConv, Zeros, Ones } init;
  bool trainable;  // running stats are named but not trainable
};

// Deterministic parameter order shared by build(), checkpoints and describe.
std::vector<ParamSpec> parameter_plan(const SegResNetConfig& cfg);

std::int64_t trainable_parameter_count(const SegResNetConfig& cfg);
std::int64_t total_parameter_count(const SegResNetConfig& cfg);

// Encoder-decoder segmentation network. Pre-activation residual blocks
// (norm -> relu -> conv3), strided-conv downsampling, transposed-conv
// upsampling with additive encoder skips, 1x1x1 heads at decoder levels
// 0..ds_levels-1. forward returns logits; softmax is applied by the caller.
template <typename T>
class SegResNet {
 public:
  static SegResNet build(const SegResNetConfig& cfg, Rng& rng);

  // Training mode returns [out_0 .. out_{ds-1}], out_i at full/2^i; eval mode
  // returns only out_0 and uses frozen running statistics.
  std::vector<Tensor<T>> forward(Graph<T>* g, const Tensor<T>& x, bool training);

  const SegResNetConfig& config() const { return cfg_; }
  const std::vector<std::string>& param_names() const { return names_; }
  const Tensor<T>& param(const std::string& name) const;
  std::vector<Tensor<T>> trainable_params() const;
  std::vector<std::string> trainable_names() const;

 private:
  SegResNetConfig cfg_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor<T>> params_;
  std::vector<bool> trainable_;

  Tensor<T> resblock(Graph<T>* g, const Tensor<T>& x, const std::string& prefix,
                     bool training);
  Tensor<T> bn(Graph<T>* g, const Tensor<T>& x, const std::string& prefix,
               bool training);
};

// 64-bit FNV-1a over the raw little-endian float bytes of every parameter in
// name order; the reproducibility checks compare these.
std::uint64_t parameter_hash(const SegResNet<float>& net);

}  // namespace hnseg
