#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "hnseg/exec.hpp"
#include "hnseg/trainer.hpp"
#include "helpers.hpp"

using namespace hnseg;

TEST_SUITE_BEGIN("trainer");

namespace {

// everything shrunk to seconds-scale: 2-stage net, 16^3 patches, 2 mm frame
PipelineConfig micro_cfg() {
  PipelineConfig cfg = desk_preset();
  cfg.preset = "custom";
  cfg.seed = 99;
  cfg.execution.parallel = false;  // sequential reproducibility mode
  cfg.resample_spacing = {2, 2, 2};

  cfg.phantom.seed = 99;
  cfg.phantom.extent_mm = {64, 64, 96};
  cfg.phantom.ct_spacing = {2, 2, 2};
  cfg.phantom.pet_spacing = {4, 4, 4};
  cfg.phantom.head_radius_min = 14;
  cfg.phantom.head_radius_max = 18;
  cfg.phantom.head_top_margin_min = 4;
  cfg.phantom.head_top_margin_max = 8;
  cfg.phantom.head_lateral_jitter = 4;
  cfg.phantom.body_radius = 20;
  cfg.phantom.tumor_radius_min = 3;
  cfg.phantom.tumor_radius_max = 5;
  cfg.phantom.node_radius_min = 3;
  cfg.phantom.node_radius_max = 4;
  cfg.phantom.lesion_lateral_max = 8;
  cfg.phantom.tumor_z_below_top_min = 16;
  cfg.phantom.tumor_z_below_top_max = 30;
  cfg.phantom.node_z_below_top_min = 16;
  cfg.phantom.node_z_below_top_max = 34;
  // at most one lesion per class so placement always succeeds in the
  // miniature head-and-neck zone
  cfg.phantom.tumor_count_weights = {0.2, 0.8, 0.0};
  cfg.phantom.node_count_min = 1;
  cfg.phantom.node_count_max = 1;

  cfg.crop.top_slab_mm = 6;
  cfg.crop.box_xy_mm = 32;
  cfg.crop.box_z_mm = 48;

  cfg.network.init_filters = 2;
  cfg.network.blocks_down = {1, 1};
  cfg.network.ds_levels = 1;
  cfg.sampler.patch_size = 16;
  cfg.inference.roi_size = 16;
  cfg.inference.overlap = 0.0;

  cfg.train.epochs = 3;
  cfg.train.steps_per_epoch = 4;
  cfg.train.lr0 = 1e-3;
  cfg.train.val_every = 1;
  cfg.train.folds = 2;
  cfg.train.runs = 1;
  return cfg;
}

CaseMap micro_cases(const PipelineConfig& cfg, int n) {
  CaseMap cases;
  for (int i = 0; i < n; ++i) {
    PhantomCase c = generate_case(cfg.phantom, i);
    PreprocessedCase pc =
        preprocess_case(c.truth.case_id, c.ct, c.pet, &c.label,
                        cfg.resample_spacing, cfg.crop, cfg.normalization);
    cases.emplace(c.truth.case_id, CaseRecord::build(c.truth.case_id, std::move(pc)));
  }
  return cases;
}

std::vector<std::vector<std::string>> two_folds(const CaseMap& cases) {
  std::vector<std::string> ids;
  for (const auto& [id, rec] : cases) ids.push_back(id);
  return split_folds(ids, 2, 1);
}

std::vector<nlohmann::json> log_entries(const std::string& path,
                                        const std::string& type) {
  std::ifstream f(path);
  REQUIRE(f);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.at("type") == type) out.push_back(j);
  }
  return out;
}

}  // namespace

TEST_CASE("lr schedule endpoints appear in the training log") {
  const PipelineConfig cfg = micro_cfg();
  apply_execution(cfg.execution);
  CaseMap cases = micro_cases(cfg, 4);
  const auto folds = two_folds(cases);
  const std::string dir = testutil::temp_dir("tr_lr");
  const FoldResult fr = train_fold(cfg, folds, cases, 0, 0, dir);
  const auto epochs = log_entries(fr.log_path, "epoch");
  REQUIRE(epochs.size() == 3);
  CHECK(epochs.front().at("lr").get<double>() == doctest::Approx(cfg.train.lr0));
  CHECK(epochs.back().at("lr").get<double>() == doctest::Approx(0.0));
}

TEST_CASE("a short smoke run decreases the loss") {
  PipelineConfig cfg = micro_cfg();
  cfg.train.epochs = 6;
  cfg.train.steps_per_epoch = 8;
  cfg.train.val_every = 6;
  apply_execution(cfg.execution);
  CaseMap cases = micro_cases(cfg, 4);
  const auto folds = two_folds(cases);
  const std::string dir = testutil::temp_dir("tr_smoke");
  const FoldResult fr = train_fold(cfg, folds, cases, 0, 0, dir);
  const auto epochs = log_entries(fr.log_path, "epoch");
  REQUIRE(epochs.size() == 6);
  CHECK(epochs.back().at("loss").get<double>() <
        epochs.front().at("loss").get<double>());
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const PipelineConfig cfg4 = micro_cfg();
  apply_execution(cfg4.execution);
  CaseMap cases = micro_cases(cfg4, 4);
  const auto folds = two_folds(cases);

  PipelineConfig cfg_full = cfg4;
  cfg_full.train.epochs = 4;
  const std::string dir_a = testutil::temp_dir("tr_full");
  const FoldResult full = train_fold(cfg_full, folds, cases, 0, 0, dir_a);

  PipelineConfig cfg_half = cfg4;
  cfg_half.train.epochs = 2;
  const std::string dir_b = testutil::temp_dir("tr_half");
  const FoldResult half = train_fold(cfg_half, folds, cases, 0, 0, dir_b);

  const std::string dir_c = testutil::temp_dir("tr_resume");
  const FoldResult resumed =
      train_fold(cfg_full, folds, cases, 0, 0, dir_c, half.last_ckpt);
  CHECK(resumed.final_param_hash == full.final_param_hash);
}

TEST_CASE("training with lr 0 leaves the trainable parameters untouched") {
  PipelineConfig cfg = micro_cfg();
  cfg.train.lr0 = 0.0;
  cfg.train.epochs = 2;
  cfg.train.val_every = 99;
  apply_execution(cfg.execution);
  CaseMap cases = micro_cases(cfg, 4);
  const auto folds = two_folds(cases);
  const std::string dir = testutil::temp_dir("tr_lr0");
  const FoldResult fr = train_fold(cfg, folds, cases, 0, 0, dir);

  // rebuild the initialization the trainer used and compare trainables
  Rng init_rng(Rng::mix(cfg.seed, 0x5eed0000ull + 0 * 1024 + 0));
  auto init = SegResNet<float>::build(cfg.network, init_rng);
  const LoadedCheckpoint last = load_checkpoint(fr.last_ckpt);
  for (const auto& name : init.trainable_names())
    CHECK(last.net.param(name)->values == init.param(name)->values);
}

TEST_CASE("the retained checkpoint carries the best validation metric") {
  PipelineConfig cfg = micro_cfg();
  cfg.train.epochs = 4;
  apply_execution(cfg.execution);
  CaseMap cases = micro_cases(cfg, 4);
  const auto folds = two_folds(cases);
  const std::string dir = testutil::temp_dir("tr_best");
  const FoldResult fr = train_fold(cfg, folds, cases, 0, 0, dir);
  const auto vals = log_entries(fr.log_path, "val");
  REQUIRE(!vals.empty());
  double best = -1;
  for (const auto& v : vals) best = std::max(best, v.at("agg_dice").get<double>());
  CHECK(fr.best_val == doctest::Approx(best));
  const LoadedCheckpoint ck = load_checkpoint(fr.best_ckpt);
  CHECK(ck.meta.best_val == doctest::Approx(best));
}

TEST_CASE("violated fold partitions are refused") {
  const PipelineConfig cfg = micro_cfg();
  apply_execution(cfg.execution);
  CaseMap cases = micro_cases(cfg, 3);
  std::vector<std::string> ids;
  for (const auto& [id, rec] : cases) ids.push_back(id);
  const std::vector<std::vector<std::string>> bad = {{ids[0], ids[1]},
                                                     {ids[1], ids[2]}};
  const std::string dir = testutil::temp_dir("tr_bad");
  CHECK_THROWS_AS(train_fold(cfg, bad, cases, 0, 0, dir), StateError);
}

TEST_CASE("a diverged run aborts with diagnostics instead of training on NaNs") {
  PipelineConfig cfg = micro_cfg();
  cfg.train.lr0 = 1e20;  // guaranteed overflow within two steps
  cfg.train.epochs = 2;
  cfg.train.val_every = 99;
  apply_execution(cfg.execution);
  CaseMap cases = micro_cases(cfg, 4);
  const auto folds = two_folds(cases);
  const std::string dir = testutil::temp_dir("tr_nan");
  CHECK_THROWS_AS(train_fold(cfg, folds, cases, 0, 0, dir), StateError);
  CHECK(std::filesystem::exists(dir + "/nan_diagnostics.json"));
}

TEST_CASE("micro crossval produces the report table and both evaluations") {
  PipelineConfig cfg = micro_cfg();
  cfg.train.epochs = 2;
  cfg.train.val_every = 1;
  cfg.train.steps_per_epoch = 2;
  apply_execution(cfg.execution);
  const std::string corpus = testutil::temp_dir("cv_corpus");
  generate_corpus(cfg.phantom, 6, corpus);
  const std::string out = testutil::temp_dir("cv_out");
  const CrossvalResult r = run_crossval(cfg, corpus, out);
  REQUIRE(r.table.size() == 1);
  REQUIRE(r.table[0].size() == 2);
  CHECK(r.fold_results.size() == 2);
  CHECK(std::filesystem::exists(r.report_csv_path));
  CHECK(std::filesystem::exists(r.report_md_path));
  CHECK(std::filesystem::exists(r.summary_path));
  CHECK(std::filesystem::exists(out + "/folds.json"));
  CHECK(std::filesystem::exists(out + "/eval_one.csv"));
  CHECK(std::filesystem::exists(out + "/eval_two.csv"));
  CHECK(r.subone_mean_agg >= 0.0);
  CHECK(r.subone_mean_agg <= 1.0);
  CHECK(r.subtwo_mean_agg >= 0.0);
  CHECK(r.subtwo_mean_agg <= 1.0);

  // report csv has one row per run with fold columns and the average
  std::ifstream csv(r.report_csv_path);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "run,fold_1,fold_2,average");
}

TEST_SUITE_END();
