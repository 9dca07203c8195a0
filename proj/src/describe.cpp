#include "hnseg/describe.hpp"

#include <cstdarg>
#include <cstdio>
#include <map>

namespace hnseg {

namespace {

std::string unit_of(const std::string& param_name) {
  // first two dot components, or one when the name has only two
  std::size_t first = param_name.find('.');
  std::size_t second = param_name.find('.', first + 1);
  if (second == std::string::npos) return param_name.substr(0, first);
  return param_name.substr(0, second);
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

}  // namespace

std::string describe_text(const PipelineConfig& cfg) {
  const auto& n = cfg.network;
  std::string out;
  out += fmt("preset: %s\n", cfg.preset.c_str());
  out += fmt("resample spacing mm: %g x %g x %g\n", cfg.resample_spacing.x,
             cfg.resample_spacing.y, cfg.resample_spacing.z);
  out += fmt("crop box mm: %g x %g x %g\n", cfg.crop.box_xy_mm, cfg.crop.box_xy_mm,
             cfg.crop.box_z_mm);
  out += fmt("patch size: %d x %d x %d\n", cfg.sampler.patch_size,
             cfg.sampler.patch_size, cfg.sampler.patch_size);
  out += "network: SegResNet\n";
  out += fmt("  input channels: %d\n", n.in_channels);
  out += fmt("  output channels: %d\n", n.out_channels);
  out += fmt("  init filters: %d\n", n.init_filters);
  out += "  blocks down: [";
  for (std::size_t i = 0; i < n.blocks_down.size(); ++i)
    out += fmt(i + 1 < n.blocks_down.size() ? "%d, " : "%d", n.blocks_down[i]);
  out += "]\n";
  out += fmt("  deep supervision levels: %d\n", n.ds_levels);
  out += fmt("optimizer: AdamW(lr0=%g, weight_decay=%g)\n", cfg.train.lr0,
             cfg.train.weight_decay);
  out += fmt("schedule: cosine annealing to zero over %d epochs\n",
             cfg.train.epochs);
  out += fmt("sampling probabilities: tumor %.2f, node %.2f, background %.2f\n",
             cfg.sampler.p_tumor, cfg.sampler.p_node, cfg.sampler.p_background);
  out += fmt("cross-validation: %d folds x %d runs -> %d-model ensemble\n",
             cfg.train.folds, cfg.train.runs, cfg.train.folds * cfg.train.runs);
  out += fmt("tta: %d axis flips\n", 8);
  out += fmt("inference roi: %d, overlap %.2f\n\n", cfg.inference.roi_size,
             cfg.inference.overlap);

  // group the parameter plan by unit, keep first-seen order
  const auto plan = parameter_plan(n);
  std::vector<std::string> order;
  std::map<std::string, std::int64_t> params_of;
  for (const auto& spec : plan) {
    const std::string unit = unit_of(spec.name);
    if (!params_of.count(unit)) order.push_back(unit);
    params_of[unit] += shape_numel(spec.shape);
  }

  // spatial level per unit
  const int S = n.stages();
  std::map<std::string, int> level_of, width_of;
  level_of["stem.conv"] = 0;
  width_of["stem.conv"] = n.width(0);
  for (int s = 0; s < S; ++s) {
    if (s > 0) {
      level_of[fmt("enc%d.down", s)] = s;
      width_of[fmt("enc%d.down", s)] = n.width(s);
    }
    for (int b = 0; b < n.blocks_down[std::size_t(s)]; ++b) {
      level_of[fmt("enc%d.block%d", s, b)] = s;
      width_of[fmt("enc%d.block%d", s, b)] = n.width(s);
    }
  }
  for (int l = S - 2; l >= 0; --l) {
    level_of[fmt("dec%d.bn", l)] = l + 1;
    width_of[fmt("dec%d.bn", l)] = n.width(l + 1);
    level_of[fmt("dec%d.up", l)] = l;
    width_of[fmt("dec%d.up", l)] = n.width(l);
    level_of[fmt("dec%d.block0", l)] = l;
    width_of[fmt("dec%d.block0", l)] = n.width(l);
  }
  for (int i = 0; i < n.ds_levels; ++i) {
    level_of[fmt("head%d", i)] = i;
    width_of[fmt("head%d", i)] = n.out_channels;
  }

  out += fmt("%-16s %-22s %12s\n", "layer", "output", "params");
  const int p = cfg.sampler.patch_size;
  for (const auto& unit : order) {
    const int lvl = level_of.at(unit);
    const int side = p >> lvl;
    out += fmt("%-16s %-22s %12lld\n", unit.c_str(),
               fmt("%d x %d x %d x %d", width_of.at(unit), side, side, side).c_str(),
               static_cast<long long>(params_of.at(unit)));
  }
  out += fmt("\ntrainable parameters: %lld\n",
             static_cast<long long>(trainable_parameter_count(n)));
  out += fmt("parameters incl. running stats: %lld\n",
             static_cast<long long>(total_parameter_count(n)));
  return out;
}

}  // namespace hnseg
