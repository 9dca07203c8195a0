#pragma once

#include <optional>
#include <string>

#include "hnseg/optim.hpp"
#include "hnseg/segresnet.hpp"

namespace hnseg {

struct CheckpointMeta {
  int epoch = -1;
  double best_val = -1.0;
  int best_epoch = -1;
  std::uint64_t config_hash = 0;  // provenance: full pipeline config
};

// Single binary file: magic/version, architecture JSON + hash, metadata, then
// every named parameter as (name, shape, raw little-endian float32), then the
// optimizer moments in trainable order. Stable across versions of this tool.
void save_checkpoint(const std::string& path, const SegResNet<float>& net,
                     const AdamW<float>* opt, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  SegResNetConfig arch;
  SegResNet<float> net;
  CheckpointMeta meta;
  bool has_opt = false;
  std::uint64_t opt_step = 0;
  std::vector<std::vector<float>> opt_m, opt_v;  // trainable order
};

// Throws FormatError on malformed files; StateError when expected_arch_hash
// is provided and does not match the stored architecture.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<std::uint64_t> expected_arch_hash =
                                     std::nullopt);

std::uint64_t fnv1a64(const std::string& s);
std::uint64_t arch_hash(const SegResNetConfig& cfg);

}  // namespace hnseg
