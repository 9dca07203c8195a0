#pragma once

#include <string>

#include "hnseg/datapipe.hpp"
#include "hnseg/inference.hpp"
#include "hnseg/loss.hpp"
#include "hnseg/phantom.hpp"
#include "hnseg/preprocess.hpp"
#include "hnseg/segresnet.hpp"

namespace hnseg {

struct ExecutionConfig {
  bool parallel = true;
  int threads = 0;  // 0 = OpenMP default

  bool operator==(const ExecutionConfig&) const = default;
};

struct TrainConfig {
  int epochs = 300;
  int steps_per_epoch = 0;  // 0 = one patch per training case per epoch
  int batch_size = 1;
  int grad_accum = 1;
  double lr0 = 2e-4;
  double weight_decay = 1e-5;
  int val_every = 10;
  int folds = 5;
  int runs = 3;

  bool operator==(const TrainConfig&) const = default;
};

struct PathsConfig {
  std::string corpus_dir;
  std::string work_dir;

  bool operator==(const PathsConfig&) const = default;
};

// Every tunable of the pipeline in one serializable record. Loading rejects
// unknown keys; missing keys fall back to the named preset.
struct PipelineConfig {
  std::string preset = "paper";  // paper | desk | custom
  std::uint64_t seed = 1234;
  PathsConfig paths;
  ExecutionConfig execution;
  Vec3d resample_spacing{1.0, 1.0, 1.0};
  PhantomSpec phantom;
  CropHeuristicConfig crop;
  NormalizationConfig normalization;
  SegResNetConfig network;
  SamplerConfig sampler;
  AugmentConfig augment;
  LossConfig loss;
  TrainConfig train;
  InferenceConfig inference;

  bool operator==(const PipelineConfig&) const = default;
};

// The paper-scale settings: 1 mm grid, 200x200x310 crop, 192^3 patches,
// 32 init filters with stages [1,2,2,4,4,4], lr 2e-4, wd 1e-5, 300 epochs,
// 5 folds x 3 runs, 8-flip TTA.
PipelineConfig paper_preset();

// A faithful shrink for workstation runs: small phantoms, 64^3 crop region,
// 32^3 patches, init filters 8 with stages [1,2,2,4], 2 folds x 1 run.
PipelineConfig desk_preset();

PipelineConfig preset_by_name(const std::string& name);

std::string dump_config(const PipelineConfig& cfg);             // canonical JSON
PipelineConfig config_from_json_text(const std::string& text);  // strict
PipelineConfig load_config_file(const std::string& path);
std::uint64_t config_hash(const PipelineConfig& cfg);

// Applies execution settings (thread count, parallel flag) process-wide.
void apply_execution(const ExecutionConfig& cfg);

}  // namespace hnseg
