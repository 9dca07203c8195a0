#include "hnseg/segresnet.hpp"

#include <cmath>

namespace hnseg {

namespace {
constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;
}  // namespace

void SegResNetConfig::validate() const {
  if (blocks_down.size() < 2)
    throw ConfigError("segresnet: need at least 2 stages (no decoder otherwise)");
  for (int b : blocks_down)
    if (b < 1) throw ConfigError("segresnet: every stage needs >= 1 block");
  if (init_filters < 1) throw ConfigError("segresnet: init_filters must be >= 1");
  if (in_channels < 1 || out_channels < 1)
    throw ConfigError("segresnet: channel counts must be >= 1");
  if (ds_levels < 1 || ds_levels > stages() - 1)
    throw ConfigError("segresnet: ds_levels must be in [1, stages-1]");
}

namespace {

void push_conv(std::vector<ParamSpec>& out, const std::string& prefix,
               std::int64_t co, std::int64_t ci, std::int64_t k) {
  out.push_back({prefix + ".weight", {co, ci, k, k, k}, ParamSpec::KaimingConv, true});
  out.push_back({prefix + ".bias", {co}, ParamSpec::Zeros, true});
}

void push_conv_t(std::vector<ParamSpec>& out, const std::string& prefix,
                 std::int64_t ci, std::int64_t co) {
  out.push_back({prefix + ".weight", {ci, co, 2, 2, 2}, ParamSpec::KaimingConv, true});
  out.push_back({prefix + ".bias", {co}, ParamSpec::Zeros, true});
}

void push_bn(std::vector<ParamSpec>& out, const std::string& prefix,
             std::int64_t c) {
  out.push_back({prefix + ".weight", {c}, ParamSpec::Ones, true});
  out.push_back({prefix + ".bias", {c}, ParamSpec::Zeros, true});
  out.push_back({prefix + ".running_mean", {c}, ParamSpec::Zeros, false});
  out.push_back({prefix + ".running_var", {c}, ParamSpec::Ones, false});
}

void push_block(std::vector<ParamSpec>& out, const std::string& prefix,
                std::int64_t w) {
  push_bn(out, prefix + ".bn1", w);
  push_conv(out, prefix + ".conv1", w, w, 3);
  push_bn(out, prefix + ".bn2", w);
  push_conv(out, prefix + ".conv2", w, w, 3);
}

}  // namespace

std::vector<ParamSpec> parameter_plan(const SegResNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> plan;
  const int S = cfg.stages();
  push_conv(plan, "stem.conv", cfg.width(0), cfg.in_channels, 3);
  for (int s = 0; s < S; ++s) {
    const std::string enc = "enc" + std::to_string(s);
    if (s > 0) push_conv(plan, enc + ".down", cfg.width(s), cfg.width(s - 1), 3);
    for (int b = 0; b < cfg.blocks_down[std::size_t(s)]; ++b)
      push_block(plan, enc + ".block" + std::to_string(b), cfg.width(s));
  }
  for (int l = S - 2; l >= 0; --l) {
    const std::string dec = "dec" + std::to_string(l);
    push_bn(plan, dec + ".bn", cfg.width(l + 1));
    push_conv_t(plan, dec + ".up", cfg.width(l + 1), cfg.width(l));
    push_block(plan, dec + ".block0", cfg.width(l));
  }
  for (int i = 0; i < cfg.ds_levels; ++i)
    push_conv(plan, "head" + std::to_string(i), cfg.out_channels, cfg.width(i), 1);
  return plan;
}

std::int64_t trainable_parameter_count(const SegResNetConfig& cfg) {
  std::int64_t n = 0;
  for (const auto& p : parameter_plan(cfg))
    if (p.trainable) n += shape_numel(p.shape);
  return n;
}

std::int64_t total_parameter_count(const SegResNetConfig& cfg) {
  std::int64_t n = 0;
  for (const auto& p : parameter_plan(cfg)) n += shape_numel(p.shape);
  return n;
}

template <typename T>
SegResNet<T> SegResNet<T>::build(const SegResNetConfig& cfg, Rng& rng) {
  SegResNet<T> net;
  net.cfg_ = cfg;
  for (const auto& spec : parameter_plan(cfg)) {
    auto t = make_tensor<T>(spec.shape, spec.trainable);
    switch (spec.init) {
      case ParamSpec::KaimingConv: {
        // fan-in from dim 1 and the receptive field, relu gain
        std::int64_t fan_in = spec.shape[1];
        for (std::size_t d = 2; d < spec.shape.size(); ++d)
          fan_in *= spec.shape[d];
        const double bound = std::sqrt(6.0 / double(fan_in));
        for (auto& v : t->values) v = T(rng.uniform(-bound, bound));
        break;
      }
      case ParamSpec::Zeros:
        break;
      case ParamSpec::Ones:
        std::fill(t->values.begin(), t->values.end(), T(1));
        break;
    }
    net.names_.push_back(spec.name);
    net.trainable_.push_back(spec.trainable);
    net.params_.emplace(spec.name, std::move(t));
  }
  return net;
}

template <typename T>
const Tensor<T>& SegResNet<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw ArgumentError("segresnet: unknown parameter " + name);
  return it->second;
}

template <typename T>
std::vector<Tensor<T>> SegResNet<T>::trainable_params() const {
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (trainable_[i]) out.push_back(params_.at(names_[i]));
  return out;
}

template <typename T>
std::vector<std::string> SegResNet<T>::trainable_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (trainable_[i]) out.push_back(names_[i]);
  return out;
}

template <typename T>
Tensor<T> SegResNet<T>::bn(Graph<T>* g, const Tensor<T>& x,
                           const std::string& prefix, bool training) {
  return batch_norm3d(g, x, param(prefix + ".weight"), param(prefix + ".bias"),
                      param(prefix + ".running_mean"),
                      param(prefix + ".running_var"), training, T(kBnMomentum),
                      T(kBnEps));
}

template <typename T>
Tensor<T> SegResNet<T>::resblock(Graph<T>* g, const Tensor<T>& x,
                                 const std::string& prefix, bool training) {
  Tensor<T> h = bn(g, x, prefix + ".bn1", training);
  h = relu(g, h);
  h = conv3d(g, h, param(prefix + ".conv1.weight"), param(prefix + ".conv1.bias"),
             1, 1);
  h = bn(g, h, prefix + ".bn2", training);
  h = relu(g, h);
  h = conv3d(g, h, param(prefix + ".conv2.weight"), param(prefix + ".conv2.bias"),
             1, 1);
  return add(g, x, h);
}

template <typename T>
std::vector<Tensor<T>> SegResNet<T>::forward(Graph<T>* g, const Tensor<T>& x,
                                             bool training) {
  if (!x || x->shape.size() != 5) throw ShapeError("segresnet: input must be 5-d");
  if (x->shape[1] != cfg_.in_channels)
    throw ShapeError("segresnet: wrong input channel count");
  const int div = cfg_.spatial_divisor();
  for (int d = 2; d < 5; ++d)
    if (x->shape[std::size_t(d)] % div)
      throw ShapeError("segresnet: spatial dims must be divisible by " +
                       std::to_string(div));

  const int S = cfg_.stages();
  std::vector<Tensor<T>> skips(static_cast<std::size_t>(S));
  Tensor<T> cur = conv3d(g, x, param("stem.conv.weight"), param("stem.conv.bias"),
                         1, 1);
  for (int s = 0; s < S; ++s) {
    const std::string enc = "enc" + std::to_string(s);
    if (s > 0)
      cur = conv3d(g, cur, param(enc + ".down.weight"), param(enc + ".down.bias"),
                   2, 1);
    for (int b = 0; b < cfg_.blocks_down[std::size_t(s)]; ++b)
      cur = resblock(g, cur, enc + ".block" + std::to_string(b), training);
    skips[std::size_t(s)] = cur;
  }

  std::vector<Tensor<T>> outs(static_cast<std::size_t>(cfg_.ds_levels));
  for (int l = S - 2; l >= 0; --l) {
    const std::string dec = "dec" + std::to_string(l);
    cur = bn(g, cur, dec + ".bn", training);
    cur = relu(g, cur);
    cur = conv_transpose3d(g, cur, param(dec + ".up.weight"),
                           param(dec + ".up.bias"));
    cur = add(g, cur, skips[std::size_t(l)]);
    cur = resblock(g, cur, dec + ".block0", training);
    if (l < cfg_.ds_levels && (training || l == 0))
      outs[std::size_t(l)] =
          conv3d(g, cur, param("head" + std::to_string(l) + ".weight"),
                 param("head" + std::to_string(l) + ".bias"), 1, 0);
  }
  if (!training) return {outs[0]};
  return outs;
}

std::uint64_t parameter_hash(const SegResNet<float>& net) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_bytes = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& name : net.param_names()) {
    mix_bytes(name.data(), name.size());
    const auto& t = net.param(name);
    mix_bytes(t->values.data(), t->values.size() * sizeof(float));
  }
  return h;
}

template class SegResNet<float>;
template class SegResNet<double>;

}  // namespace hnseg
