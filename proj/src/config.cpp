#include "hnseg/config.hpp"

#include <fstream>

#include "hnseg/checkpoint.hpp"
#include "hnseg/exec.hpp"
#include "hnseg/json_io.hpp"

namespace hnseg {

PipelineConfig paper_preset() {
  PipelineConfig cfg;  // struct defaults are the paper values
  cfg.preset = "paper";
  return cfg;
}

PipelineConfig desk_preset() {
  PipelineConfig cfg;
  cfg.preset = "desk";

  cfg.phantom.extent_mm = {96, 96, 128};
  cfg.phantom.ct_spacing = {1, 1, 2};
  cfg.phantom.pet_spacing = {3, 3, 3};
  cfg.phantom.head_radius_min = 18;
  cfg.phantom.head_radius_max = 24;
  cfg.phantom.head_top_margin_min = 6;
  cfg.phantom.head_top_margin_max = 12;
  cfg.phantom.head_lateral_jitter = 8;
  cfg.phantom.body_radius = 30;
  cfg.phantom.tumor_radius_min = 4;
  cfg.phantom.tumor_radius_max = 7;
  cfg.phantom.node_radius_min = 3;
  cfg.phantom.node_radius_max = 5;
  cfg.phantom.semi_axis_jitter = 0.2;
  cfg.phantom.lesion_lateral_max = 18;
  cfg.phantom.tumor_z_below_top_min = 26;
  cfg.phantom.tumor_z_below_top_max = 48;
  cfg.phantom.node_z_below_top_min = 26;
  cfg.phantom.node_z_below_top_max = 52;

  cfg.crop.top_slab_mm = 12;
  cfg.crop.box_xy_mm = 64;
  cfg.crop.box_z_mm = 64;

  cfg.network.init_filters = 8;
  cfg.network.blocks_down = {1, 2, 2, 4};
  cfg.network.ds_levels = 3;

  cfg.sampler.patch_size = 32;

  cfg.train.epochs = 40;
  cfg.train.lr0 = 1e-3;  // 2e-4 underfits within a desk-scale step budget
  cfg.train.val_every = 10;
  cfg.train.folds = 2;
  cfg.train.runs = 1;

  cfg.inference.roi_size = 32;
  cfg.inference.overlap = 0.0;
  return cfg;
}

PipelineConfig preset_by_name(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset \"" + name + "\" (expected paper or desk)");
}

namespace {

using nlohmann::json;

json dump_phantom(const PhantomSpec& p) {
  return json{{"seed", p.seed},
              {"extent_mm", p.extent_mm},
              {"ct_spacing", p.ct_spacing},
              {"pet_spacing", p.pet_spacing},
              {"head_radius_min", p.head_radius_min},
              {"head_radius_max", p.head_radius_max},
              {"head_top_margin_min", p.head_top_margin_min},
              {"head_top_margin_max", p.head_top_margin_max},
              {"head_lateral_jitter", p.head_lateral_jitter},
              {"body_radius", p.body_radius},
              {"tumor_count_weights", p.tumor_count_weights},
              {"node_count_min", p.node_count_min},
              {"node_count_max", p.node_count_max},
              {"tumor_radius_min", p.tumor_radius_min},
              {"tumor_radius_max", p.tumor_radius_max},
              {"node_radius_min", p.node_radius_min},
              {"node_radius_max", p.node_radius_max},
              {"lesion_lateral_max", p.lesion_lateral_max},
              {"tumor_z_below_top_min", p.tumor_z_below_top_min},
              {"tumor_z_below_top_max", p.tumor_z_below_top_max},
              {"node_z_below_top_min", p.node_z_below_top_min},
              {"node_z_below_top_max", p.node_z_below_top_max},
              {"semi_axis_jitter", p.semi_axis_jitter},
              {"exponent_min", p.exponent_min},
              {"exponent_max", p.exponent_max},
              {"pet_body", p.pet_body},
              {"pet_head", p.pet_head},
              {"tumor_uptake_min", p.tumor_uptake_min},
              {"tumor_uptake_max", p.tumor_uptake_max},
              {"node_uptake_min", p.node_uptake_min},
              {"node_uptake_max", p.node_uptake_max},
              {"lesion_falloff", p.lesion_falloff},
              {"pet_noise_sigma", p.pet_noise_sigma},
              {"ct_air", p.ct_air},
              {"ct_soft", p.ct_soft},
              {"ct_bone", p.ct_bone},
              {"ct_tumor", p.ct_tumor},
              {"ct_node", p.ct_node},
              {"ct_noise_sigma", p.ct_noise_sigma}};
}

void apply_phantom(PhantomSpec& p, const json& j) {
  expect_keys(j, {"seed",
                  "extent_mm",
                  "ct_spacing",
                  "pet_spacing",
                  "head_radius_min",
                  "head_radius_max",
                  "head_top_margin_min",
                  "head_top_margin_max",
                  "head_lateral_jitter",
                  "body_radius",
                  "tumor_count_weights",
                  "node_count_min",
                  "node_count_max",
                  "tumor_radius_min",
                  "tumor_radius_max",
                  "node_radius_min",
                  "node_radius_max",
                  "lesion_lateral_max",
                  "tumor_z_below_top_min",
                  "tumor_z_below_top_max",
                  "node_z_below_top_min",
                  "node_z_below_top_max",
                  "semi_axis_jitter",
                  "exponent_min",
                  "exponent_max",
                  "pet_body",
                  "pet_head",
                  "tumor_uptake_min",
                  "tumor_uptake_max",
                  "node_uptake_min",
                  "node_uptake_max",
                  "lesion_falloff",
                  "pet_noise_sigma",
                  "ct_air",
                  "ct_soft",
                  "ct_bone",
                  "ct_tumor",
                  "ct_node",
                  "ct_noise_sigma"},
              "phantom");
#define GETP(field) \
  if (j.contains(#field)) j.at(#field).get_to(p.field)
  GETP(seed);
  GETP(extent_mm);
  GETP(ct_spacing);
  GETP(pet_spacing);
  GETP(head_radius_min);
  GETP(head_radius_max);
  GETP(head_top_margin_min);
  GETP(head_top_margin_max);
  GETP(head_lateral_jitter);
  GETP(body_radius);
  GETP(tumor_count_weights);
  GETP(node_count_min);
  GETP(node_count_max);
  GETP(tumor_radius_min);
  GETP(tumor_radius_max);
  GETP(node_radius_min);
  GETP(node_radius_max);
  GETP(lesion_lateral_max);
  GETP(tumor_z_below_top_min);
  GETP(tumor_z_below_top_max);
  GETP(node_z_below_top_min);
  GETP(node_z_below_top_max);
  GETP(semi_axis_jitter);
  GETP(exponent_min);
  GETP(exponent_max);
  GETP(pet_body);
  GETP(pet_head);
  GETP(tumor_uptake_min);
  GETP(tumor_uptake_max);
  GETP(node_uptake_min);
  GETP(node_uptake_max);
  GETP(lesion_falloff);
  GETP(pet_noise_sigma);
  GETP(ct_air);
  GETP(ct_soft);
  GETP(ct_bone);
  GETP(ct_tumor);
  GETP(ct_node);
  GETP(ct_noise_sigma);
#undef GETP
}

}  // namespace

std::string dump_config(const PipelineConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["seed"] = cfg.seed;
  j["paths"] = {{"corpus_dir", cfg.paths.corpus_dir},
                {"work_dir", cfg.paths.work_dir}};
  j["execution"] = {{"parallel", cfg.execution.parallel},
                    {"threads", cfg.execution.threads}};
  j["resample_spacing"] = cfg.resample_spacing;
  j["phantom"] = dump_phantom(cfg.phantom);
  j["crop"] = {{"pet_threshold", cfg.crop.pet_threshold},
               {"top_slab_mm", cfg.crop.top_slab_mm},
               {"box_xy_mm", cfg.crop.box_xy_mm},
               {"box_z_mm", cfg.crop.box_z_mm}};
  j["normalization"] = {{"ct_low", cfg.normalization.ct_low},
                        {"ct_high", cfg.normalization.ct_high},
                        {"ct_logit_span", cfg.normalization.ct_logit_span}};
  j["network"] = {{"in_channels", cfg.network.in_channels},
                  {"out_channels", cfg.network.out_channels},
                  {"init_filters", cfg.network.init_filters},
                  {"blocks_down", cfg.network.blocks_down},
                  {"ds_levels", cfg.network.ds_levels}};
  j["sampler"] = {{"patch_size", cfg.sampler.patch_size},
                  {"p_tumor", cfg.sampler.p_tumor},
                  {"p_node", cfg.sampler.p_node},
                  {"p_background", cfg.sampler.p_background}};
  j["augment"] = {{"flip_prob", cfg.augment.flip_prob},
                  {"affine_prob", cfg.augment.affine_prob},
                  {"rot_deg", cfg.augment.rot_deg},
                  {"scale_frac", cfg.augment.scale_frac},
                  {"intensity_prob", cfg.augment.intensity_prob},
                  {"intensity_scale", cfg.augment.intensity_scale},
                  {"intensity_shift", cfg.augment.intensity_shift},
                  {"noise_sigma_max", cfg.augment.noise_sigma_max},
                  {"blur_sigma_max", cfg.augment.blur_sigma_max},
                  {"softclamp_span", cfg.augment.softclamp_span}};
  j["loss"] = {{"dice_smooth", cfg.loss.dice_smooth},
               {"include_background", cfg.loss.include_background}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"steps_per_epoch", cfg.train.steps_per_epoch},
                {"batch_size", cfg.train.batch_size},
                {"grad_accum", cfg.train.grad_accum},
                {"lr0", cfg.train.lr0},
                {"weight_decay", cfg.train.weight_decay},
                {"val_every", cfg.train.val_every},
                {"folds", cfg.train.folds},
                {"runs", cfg.train.runs}};
  j["inference"] = {{"roi_size", cfg.inference.roi_size},
                    {"overlap", cfg.inference.overlap},
                    {"tta", cfg.inference.tta},
                    {"postprocess", cfg.inference.postprocess},
                    {"min_component_mm3", cfg.inference.min_component_mm3},
                    {"min_mean_pet", cfg.inference.min_mean_pet}};
  return j.dump(2);
}

PipelineConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  expect_keys(j,
              {"preset", "seed", "paths", "execution", "resample_spacing",
               "phantom", "crop", "normalization", "network", "sampler",
               "augment", "loss", "train", "inference"},
              "config");

  PipelineConfig cfg = j.contains("preset")
                           ? preset_by_name(j.at("preset").get<std::string>())
                           : paper_preset();
  try {
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("paths")) {
      const auto& jp = j.at("paths");
      expect_keys(jp, {"corpus_dir", "work_dir"}, "paths");
      if (jp.contains("corpus_dir"))
        cfg.paths.corpus_dir = jp.at("corpus_dir").get<std::string>();
      if (jp.contains("work_dir"))
        cfg.paths.work_dir = jp.at("work_dir").get<std::string>();
    }
    if (j.contains("execution")) {
      const auto& je = j.at("execution");
      expect_keys(je, {"parallel", "threads"}, "execution");
      if (je.contains("parallel"))
        cfg.execution.parallel = je.at("parallel").get<bool>();
      if (je.contains("threads"))
        cfg.execution.threads = je.at("threads").get<int>();
    }
    if (j.contains("resample_spacing"))
      j.at("resample_spacing").get_to(cfg.resample_spacing);
    if (j.contains("phantom")) apply_phantom(cfg.phantom, j.at("phantom"));
    if (j.contains("crop")) {
      const auto& jc = j.at("crop");
      expect_keys(jc, {"pet_threshold", "top_slab_mm", "box_xy_mm", "box_z_mm"},
                  "crop");
      if (jc.contains("pet_threshold"))
        cfg.crop.pet_threshold = jc.at("pet_threshold").get<double>();
      if (jc.contains("top_slab_mm"))
        cfg.crop.top_slab_mm = jc.at("top_slab_mm").get<double>();
      if (jc.contains("box_xy_mm"))
        cfg.crop.box_xy_mm = jc.at("box_xy_mm").get<double>();
      if (jc.contains("box_z_mm"))
        cfg.crop.box_z_mm = jc.at("box_z_mm").get<double>();
    }
    if (j.contains("normalization")) {
      const auto& jn = j.at("normalization");
      expect_keys(jn, {"ct_low", "ct_high", "ct_logit_span"}, "normalization");
      if (jn.contains("ct_low")) cfg.normalization.ct_low = jn.at("ct_low").get<double>();
      if (jn.contains("ct_high"))
        cfg.normalization.ct_high = jn.at("ct_high").get<double>();
      if (jn.contains("ct_logit_span"))
        cfg.normalization.ct_logit_span = jn.at("ct_logit_span").get<double>();
    }
    if (j.contains("network")) {
      const auto& jn = j.at("network");
      expect_keys(jn,
                  {"in_channels", "out_channels", "init_filters", "blocks_down",
                   "ds_levels"},
                  "network");
      if (jn.contains("in_channels"))
        cfg.network.in_channels = jn.at("in_channels").get<int>();
      if (jn.contains("out_channels"))
        cfg.network.out_channels = jn.at("out_channels").get<int>();
      if (jn.contains("init_filters"))
        cfg.network.init_filters = jn.at("init_filters").get<int>();
      if (jn.contains("blocks_down"))
        cfg.network.blocks_down = jn.at("blocks_down").get<std::vector<int>>();
      if (jn.contains("ds_levels"))
        cfg.network.ds_levels = jn.at("ds_levels").get<int>();
    }
    if (j.contains("sampler")) {
      const auto& js = j.at("sampler");
      expect_keys(js, {"patch_size", "p_tumor", "p_node", "p_background"},
                  "sampler");
      if (js.contains("patch_size"))
        cfg.sampler.patch_size = js.at("patch_size").get<int>();
      if (js.contains("p_tumor")) cfg.sampler.p_tumor = js.at("p_tumor").get<double>();
      if (js.contains("p_node")) cfg.sampler.p_node = js.at("p_node").get<double>();
      if (js.contains("p_background"))
        cfg.sampler.p_background = js.at("p_background").get<double>();
    }
    if (j.contains("augment")) {
      const auto& ja = j.at("augment");
      expect_keys(ja,
                  {"flip_prob", "affine_prob", "rot_deg", "scale_frac",
                   "intensity_prob", "intensity_scale", "intensity_shift",
                   "noise_sigma_max", "blur_sigma_max", "softclamp_span"},
                  "augment");
#define GETA(field) \
  if (ja.contains(#field)) ja.at(#field).get_to(cfg.augment.field)
      GETA(flip_prob);
      GETA(affine_prob);
      GETA(rot_deg);
      GETA(scale_frac);
      GETA(intensity_prob);
      GETA(intensity_scale);
      GETA(intensity_shift);
      GETA(noise_sigma_max);
      GETA(blur_sigma_max);
      GETA(softclamp_span);
#undef GETA
    }
    if (j.contains("loss")) {
      const auto& jl = j.at("loss");
      expect_keys(jl, {"dice_smooth", "include_background"}, "loss");
      if (jl.contains("dice_smooth"))
        cfg.loss.dice_smooth = jl.at("dice_smooth").get<double>();
      if (jl.contains("include_background"))
        cfg.loss.include_background = jl.at("include_background").get<bool>();
    }
    if (j.contains("train")) {
      const auto& jt = j.at("train");
      expect_keys(jt,
                  {"epochs", "steps_per_epoch", "batch_size", "grad_accum",
                   "lr0", "weight_decay", "val_every", "folds", "runs"},
                  "train");
#define GETT(field) \
  if (jt.contains(#field)) jt.at(#field).get_to(cfg.train.field)
      GETT(epochs);
      GETT(steps_per_epoch);
      GETT(batch_size);
      GETT(grad_accum);
      GETT(lr0);
      GETT(weight_decay);
      GETT(val_every);
      GETT(folds);
      GETT(runs);
#undef GETT
    }
    if (j.contains("inference")) {
      const auto& ji = j.at("inference");
      expect_keys(ji,
                  {"roi_size", "overlap", "tta", "postprocess",
                   "min_component_mm3", "min_mean_pet"},
                  "inference");
#define GETI(field) \
  if (ji.contains(#field)) ji.at(#field).get_to(cfg.inference.field)
      GETI(roi_size);
      GETI(overlap);
      GETI(tta);
      GETI(postprocess);
      GETI(min_component_mm3);
      GETI(min_mean_pet);
#undef GETI
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }

  // schema-level sanity
  cfg.network.validate();
  cfg.sampler.validate();
  if (cfg.train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(cfg.train.lr0 > 0)) throw ConfigError("train.lr0 must be > 0");
  if (cfg.sampler.patch_size % cfg.network.spatial_divisor())
    throw ConfigError("sampler.patch_size must be divisible by 2^(stages-1)");
  if (cfg.inference.roi_size % cfg.network.spatial_divisor())
    throw ConfigError("inference.roi_size must be divisible by 2^(stages-1)");
  return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return config_from_json_text(text);
}

std::uint64_t config_hash(const PipelineConfig& cfg) {
  return fnv1a64(dump_config(cfg));
}

void apply_execution(const ExecutionConfig& cfg) {
  exec::set_parallel(cfg.parallel);
  exec::set_thread_count(cfg.threads);
}

}  // namespace hnseg
