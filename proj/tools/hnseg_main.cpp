// hnseg — one binary, one config schema, verbs for every pipeline stage.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hnseg/describe.hpp"
#include "hnseg/metrics.hpp"
#include "hnseg/nifti.hpp"
#include "hnseg/phantom.hpp"
#include "hnseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace hnseg;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string preset = "desk";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = -1;
  bool sequential = false;
  bool print_config = false;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline config JSON file");
    sub->add_option("--preset", preset, "configuration preset (desk|paper)");
    sub->add_option("--seed", seed, "override the global seed")
        ->each([this](const std::string&) { seed_set = true; });
    sub->add_option("--threads", threads, "worker thread count (0 = default)");
    sub->add_flag("--sequential", sequential,
                  "run all kernels single-threaded (reproducibility mode)");
    sub->add_flag("--print-config", print_config,
                  "print the fully resolved config and exit");
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg = config_path.empty() ? preset_by_name(preset)
                                             : load_config_file(config_path);
    if (seed_set) {
      cfg.seed = seed;
      cfg.phantom.seed = seed;
    }
    if (threads >= 0) cfg.execution.threads = threads;
    if (sequential) cfg.execution.parallel = false;
    apply_execution(cfg.execution);
    if (print_config) {
      std::cout << dump_config(cfg) << "\n";
      std::exit(0);
    }
    return cfg;
  }
};

LoadedCheckpoint load_one_checkpoint(const std::string& path) {
  return load_checkpoint(path);
}

PreprocessedCase load_or_preprocess_case(const PipelineConfig& cfg,
                                         const std::string& dir) {
  if (fs::exists(dir + "/sidecar.json")) return load_case(dir);
  const ScalarVolume ct = read_nifti_scalar(dir + "/ct.nii.gz");
  const ScalarVolume pet = read_nifti_scalar(dir + "/pet.nii.gz");
  LabelVolume label;
  const LabelVolume* label_ptr = nullptr;
  if (fs::exists(dir + "/label.nii.gz")) {
    label = read_nifti_labels(dir + "/label.nii.gz");
    label_ptr = &label;
  }
  const std::string id = fs::path(dir).filename().string();
  return preprocess_case(id, ct, pet, label_ptr, cfg.resample_spacing, cfg.crop,
                         cfg.normalization);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D PET/CT head-and-neck tumor segmentation pipeline"};
  app.require_subcommand(1);

  // phantom
  auto* sub_phantom = app.add_subcommand("phantom", "generate a synthetic corpus");
  CommonOpts phantom_opts;
  phantom_opts.attach(sub_phantom);
  int phantom_count = 25;
  std::string phantom_out = "corpus";
  sub_phantom->add_option("--count", phantom_count, "number of cases");
  sub_phantom->add_option("--out", phantom_out, "output directory")->required();

  // preprocess
  auto* sub_prep = app.add_subcommand("preprocess", "crop and normalize raw cases");
  CommonOpts prep_opts;
  prep_opts.attach(sub_prep);
  std::string prep_in, prep_out;
  sub_prep->add_option("--in", prep_in, "raw corpus directory")->required();
  sub_prep->add_option("--out", prep_out, "preprocessed output directory")
      ->required();

  // train
  auto* sub_train = app.add_subcommand("train", "train one fold");
  CommonOpts train_opts;
  train_opts.attach(sub_train);
  std::string train_corpus, train_out = "runs", train_resume;
  int train_fold_idx = 0, train_run_idx = 0;
  sub_train->add_option("--corpus", train_corpus, "preprocessed case directory")
      ->required();
  sub_train->add_option("--fold", train_fold_idx, "fold index");
  sub_train->add_option("--run", train_run_idx, "run index");
  sub_train->add_option("--out", train_out, "output directory");
  sub_train->add_option("--resume", train_resume, "checkpoint to resume from");

  // crossval
  auto* sub_cv = app.add_subcommand("crossval", "k-fold cross-validation");
  CommonOpts cv_opts;
  cv_opts.attach(sub_cv);
  std::string cv_corpus, cv_out = "crossval";
  sub_cv->add_option("--phantom-corpus,--corpus", cv_corpus,
                     "raw corpus directory")
      ->required();
  sub_cv->add_option("--out", cv_out, "output directory");

  // infer
  auto* sub_infer = app.add_subcommand("infer", "predict one case");
  CommonOpts infer_opts;
  infer_opts.attach(sub_infer);
  std::string infer_ckpts, infer_input, infer_out = "pred.nii.gz";
  bool infer_tta = false, infer_post = false;
  sub_infer->add_option("--checkpoints", infer_ckpts, "comma-separated checkpoints")
      ->required();
  sub_infer->add_option("--input", infer_input, "case directory")->required();
  sub_infer->add_option("--out", infer_out, "output NIfTI path");
  sub_infer->add_flag("--tta", infer_tta, "average the 8 axis-flip predictions");
  sub_infer->add_flag("--postprocess", infer_post,
                      "drop small / PET-cold lymph-node components");

  // evaluate
  auto* sub_eval = app.add_subcommand("evaluate", "aggregated Dice over a directory");
  CommonOpts eval_opts;
  eval_opts.attach(sub_eval);
  std::string eval_pred, eval_gt, eval_report = "report.csv";
  sub_eval->add_option("--pred-dir", eval_pred, "prediction masks")->required();
  sub_eval->add_option("--gt-dir", eval_gt, "ground-truth masks")->required();
  sub_eval->add_option("--report", eval_report, "output CSV path");

  // describe
  auto* sub_desc = app.add_subcommand("describe", "print the resolved network");
  CommonOpts desc_opts;
  desc_opts.attach(sub_desc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sub_phantom->parsed()) {
      const PipelineConfig cfg = phantom_opts.resolve();
      generate_corpus(cfg.phantom, phantom_count, phantom_out);
      write_provenance(phantom_out, cfg, "phantom");
      std::cout << "wrote " << phantom_count << " cases to " << phantom_out
                << "\n";
    } else if (sub_prep->parsed()) {
      const PipelineConfig cfg = prep_opts.resolve();
      preprocess_corpus(cfg, prep_in, prep_out);
      write_provenance(prep_out, cfg, "preprocess");
      std::cout << "preprocessed cases into " << prep_out << "\n";
    } else if (sub_train->parsed()) {
      const PipelineConfig cfg = train_opts.resolve();
      CaseMap cases = load_preprocessed_cases(train_corpus);
      std::vector<std::string> ids;
      for (const auto& [id, rec] : cases) ids.push_back(id);
      const auto folds = split_folds(ids, cfg.train.folds, cfg.seed);
      const std::string dir = train_out + "/fold" +
                              std::to_string(train_fold_idx) + "_run" +
                              std::to_string(train_run_idx);
      write_provenance(dir, cfg, "train");
      const FoldResult fr = train_fold(cfg, folds, cases, train_fold_idx,
                                       train_run_idx, dir, train_resume);
      std::cout << "fold " << fr.fold << " run " << fr.run << " best val dice "
                << fr.best_val << " at epoch " << fr.best_epoch << "\n"
                << "best checkpoint: " << fr.best_ckpt << "\n";
    } else if (sub_cv->parsed()) {
      const PipelineConfig cfg = cv_opts.resolve();
      const CrossvalResult r = run_crossval(cfg, cv_corpus, cv_out);
      std::cout << "cross-validation mean aggregated dice: " << r.mean_val << "\n"
                << "single-model (no TTA): " << r.subone_mean_agg << "\n"
                << "ensemble + TTA:        " << r.subtwo_mean_agg << "\n"
                << "report: " << r.report_csv_path << "\n";
    } else if (sub_infer->parsed()) {
      const PipelineConfig cfg = infer_opts.resolve();
      std::vector<std::string> paths;
      for (std::size_t pos = 0; pos < infer_ckpts.size();) {
        const std::size_t comma = infer_ckpts.find(',', pos);
        paths.push_back(infer_ckpts.substr(
            pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      std::vector<std::shared_ptr<SegResNet<float>>> models;
      std::uint64_t first_hash = 0;
      for (const auto& p : paths) {
        LoadedCheckpoint ck = load_one_checkpoint(p);
        const std::uint64_t h = arch_hash(ck.arch);
        if (models.empty())
          first_hash = h;
        else if (h != first_hash)
          throw StateError("checkpoint " + p + " has a different architecture");
        models.push_back(std::make_shared<SegResNet<float>>(std::move(ck.net)));
      }
      PreprocessedCase pc = load_or_preprocess_case(cfg, infer_input);
      const Tensor<float> input = make_network_input(pc.ct, pc.pet);
      const auto fills = channel_fills(pc.sidecar);
      InferenceConfig icfg = cfg.inference;
      icfg.tta = infer_tta;
      std::vector<ProbabilityMap> maps;
      for (const auto& net : models)
        maps.push_back(icfg.tta ? tta_predict(make_predictor(net), input,
                                              pc.ct.geom, icfg, fills)
                                : sliding_window(make_predictor(net), input,
                                                 pc.ct.geom, icfg, fills));
      const ProbabilityMap pm = ensemble_mean(maps);
      LabelVolume mask = probability_argmax(pm);
      if (infer_post) {
        const ScalarVolume raw_pet =
            denormalize_pet(pc.pet, pc.sidecar.pet_mean, pc.sidecar.pet_std);
        mask = postprocess_nodes(mask, raw_pet, icfg);
      }
      const LabelVolume final_mask =
          embed_to_ct_grid(mask, pc.sidecar, pc.sidecar.original_ct);
      write_nifti(final_mask, infer_out);
      std::cout << "wrote " << infer_out << "\n";
    } else if (sub_eval->parsed()) {
      eval_opts.resolve();
      const EvalReport rep = evaluate_directories(eval_pred, eval_gt);
      std::ofstream f(eval_report);
      if (!f) throw IoError("cannot write " + eval_report);
      f << report_to_csv(rep);
      std::cout << "aggregated dice gtvp " << rep.aggregated.per_class[0]
                << " gtvn " << rep.aggregated.per_class[1] << " mean "
                << rep.aggregated.mean << "\n"
                << "report: " << eval_report << "\n";
    } else if (sub_desc->parsed()) {
      const PipelineConfig cfg = desc_opts.resolve();
      std::cout << describe_text(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "{\"error\":\"config\",\"message\":\"" << e.what() << "\"}\n";
    return 3;
  } catch (const PipelineError& e) {
    std::cerr << "{\"error\":\"pipeline\",\"message\":\"" << e.what() << "\"}\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"internal\",\"message\":\"" << e.what() << "\"}\n";
    return 1;
  }
  return 0;
}
