#pragma once

#include <map>
#include <memory>

#include "hnseg/checkpoint.hpp"
#include "hnseg/config.hpp"
#include "hnseg/datapipe.hpp"
#include "hnseg/inference.hpp"

namespace hnseg {

using CaseMap = std::map<std::string, CaseRecord>;

// Loads every preprocessed case directory under prep_dir.
CaseMap load_preprocessed_cases(const std::string& prep_dir);

struct FoldResult {
  int fold = 0, run = 0;
  double best_val = -1.0;
  int best_epoch = -1;
  std::string best_ckpt, last_ckpt, log_path;
  std::uint64_t final_param_hash = 0;
};

// One training run on the given fold: patch sampling + augmentation, deep
// supervision loss, AdamW with the per-epoch cosine schedule, periodic
// held-out validation with sliding-window inference, best-checkpoint
// retention, JSON-lines logging, resumable from any saved epoch.
FoldResult train_fold(const PipelineConfig& cfg,
                      const std::vector<std::vector<std::string>>& folds,
                      const CaseMap& cases, int fold, int run,
                      const std::string& out_dir,
                      const std::string& resume_from = "");

struct CrossvalResult {
  std::vector<FoldResult> fold_results;    // run-major
  std::vector<std::vector<double>> table;  // [run][fold] best validation dice
  std::vector<double> run_means;
  double mean_val = 0.0;
  double subone_mean_agg = 0.0;  // per-fold single model, no TTA
  double subtwo_mean_agg = 0.0;  // all-model mean ensemble + 8-flip TTA
  std::string report_csv_path, report_md_path, summary_path;
};

// End-to-end: preprocess the raw corpus (cached under out_dir/prep), split
// folds, train folds x runs models, then evaluate the held-out cases on the
// original CT grids both ways (single-model and ensemble+TTA) and write the
// cross-validation report table.
CrossvalResult run_crossval(const PipelineConfig& cfg,
                            const std::string& corpus_dir,
                            const std::string& out_dir);

// Preprocesses every raw case directory under corpus_dir into prep_dir;
// cases with an existing sidecar are kept as-is.
void preprocess_corpus(const PipelineConfig& cfg, const std::string& corpus_dir,
                       const std::string& prep_dir);

// Eval-mode forward + channel softmax as a window predictor.
Predictor make_predictor(std::shared_ptr<SegResNet<float>> net);

// Per-channel pad/fill constants implied by a case's normalization record.
std::array<float, 2> channel_fills(const CaseSidecar& sidecar);

// Writes config hash, seed and tool version next to run outputs.
void write_provenance(const std::string& dir, const PipelineConfig& cfg,
                      const std::string& verb);

inline constexpr const char* kToolVersion = "hnseg 1.0.0";

}  // namespace hnseg
