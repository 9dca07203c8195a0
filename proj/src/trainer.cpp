#include "hnseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "hnseg/json_io.hpp"
#include "hnseg/loss.hpp"
#include "hnseg/metrics.hpp"
#include "hnseg/nifti.hpp"
#include "hnseg/optim.hpp"

namespace hnseg {

namespace fs = std::filesystem;

CaseMap load_preprocessed_cases(const std::string& prep_dir) {
  CaseMap cases;
  if (!fs::is_directory(prep_dir))
    throw IoError("preprocessed case directory not found: " + prep_dir);
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(prep_dir))
    if (e.is_directory() && fs::exists(e.path() / "sidecar.json"))
      dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    PreprocessedCase pc = load_case(d);
    std::string id = pc.sidecar.case_id;
    cases.emplace(id, CaseRecord::build(id, std::move(pc)));
  }
  if (cases.empty()) throw CaseError("no preprocessed cases in " + prep_dir);
  return cases;
}

Predictor make_predictor(std::shared_ptr<SegResNet<float>> net) {
  return [net](const Tensor<float>& window) {
    auto outs = net->forward(nullptr, window, /*training=*/false);
    return softmax_channels<float>(nullptr, outs[0]);
  };
}

std::array<float, 2> channel_fills(const CaseSidecar& sc) {
  const float ct_fill = float(1.0 / (1.0 + std::exp(sc.ct_logit_span)));
  const float pet_fill =
      float(1.0 / (1.0 + std::exp(sc.pet_mean / std::max(sc.pet_std, 1e-12))));
  return {ct_fill, pet_fill};
}

void write_provenance(const std::string& dir, const PipelineConfig& cfg,
                      const std::string& verb) {
  fs::create_directories(dir);
  nlohmann::json j{{"tool", kToolVersion},
                   {"verb", verb},
                   {"seed", cfg.seed},
                   {"preset", cfg.preset},
                   {"config_hash", config_hash(cfg)}};
  std::ofstream f(dir + "/provenance.json");
  if (f) f << j.dump(2) << "\n";
}

namespace {

double lr_for_epoch(int epoch, int total, double lr0) {
  // endpoint convention: first epoch trains at lr0, the last one reaches 0
  return total > 1 ? cosine_lr(epoch, total - 1, lr0) : lr0;
}

struct Batch {
  Tensor<float> input;
  LabelPatch target;
};

Batch assemble_batch(const std::vector<Patch>& patches) {
  const auto& s = patches[0].input->shape;
  const std::int64_t B = std::int64_t(patches.size());
  Batch b;
  b.input = make_tensor<float>({B, s[1], s[2], s[3], s[4]});
  b.target.shape = {B, s[2], s[3], s[4]};
  b.target.labels.resize(std::size_t(B * s[2] * s[3] * s[4]));
  const std::size_t in_stride = patches[0].input->values.size();
  const std::size_t t_stride = patches[0].target.labels.size();
  for (std::int64_t i = 0; i < B; ++i) {
    std::copy(patches[std::size_t(i)].input->values.begin(),
              patches[std::size_t(i)].input->values.end(),
              b.input->values.begin() + std::size_t(i) * in_stride);
    std::copy(patches[std::size_t(i)].target.labels.begin(),
              patches[std::size_t(i)].target.labels.end(),
              b.target.labels.begin() + std::size_t(i) * t_stride);
  }
  return b;
}

// full-volume validation on the cropped frame (no TTA, no resampling back)
double validate_fold(SegResNet<float>& net, const PipelineConfig& cfg,
                     const CaseMap& cases, const std::vector<std::string>& val_ids) {
  auto shared = std::shared_ptr<SegResNet<float>>(&net, [](SegResNet<float>*) {});
  const Predictor pred = make_predictor(shared);
  std::vector<LabelVolume> preds, gts;
  preds.reserve(val_ids.size());
  for (const auto& id : val_ids) {
    const CaseRecord& rec = cases.at(id);
    if (!rec.data.has_label)
      throw CaseError("validation case " + id + " has no label");
    const Tensor<float> input = make_network_input(rec.data.ct, rec.data.pet);
    const ProbabilityMap pm = sliding_window(pred, input, rec.data.ct.geom,
                                             cfg.inference,
                                             channel_fills(rec.data.sidecar));
    preds.push_back(probability_argmax(pm));
    gts.push_back(rec.data.label);
  }
  std::vector<std::pair<const LabelVolume*, const LabelVolume*>> pairs;
  for (std::size_t i = 0; i < preds.size(); ++i)
    pairs.emplace_back(&preds[i], &gts[i]);
  return aggregated_dice(pairs).mean;
}

void dump_diagnostics(const std::string& path, int epoch, int step, double lr,
                      double loss, const SegResNet<float>& net) {
  nlohmann::json j{{"epoch", epoch},
                   {"step", step},
                   {"lr", lr},
                   {"loss", loss},
                   {"param_hash", parameter_hash(net)}};
  std::ofstream f(path);
  if (f) f << j.dump(2) << "\n";
}

}  // namespace

FoldResult train_fold(const PipelineConfig& cfg,
                      const std::vector<std::vector<std::string>>& folds,
                      const CaseMap& cases, int fold, int run,
                      const std::string& out_dir,
                      const std::string& resume_from) {
  if (fold < 0 || std::size_t(fold) >= folds.size())
    throw ArgumentError("train_fold: fold index out of range");
  fs::create_directories(out_dir);

  std::vector<std::string> train_ids;
  const std::vector<std::string>& val_ids = folds[std::size_t(fold)];
  for (std::size_t f = 0; f < folds.size(); ++f)
    if (int(f) != fold)
      train_ids.insert(train_ids.end(), folds[f].begin(), folds[f].end());
  std::sort(train_ids.begin(), train_ids.end());
  {
    // validation must never touch a training case
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    for (const auto& id : val_ids)
      if (train_set.count(id))
        throw StateError("fold partition violated: " + id + " in both sets");
  }
  for (const auto& id : train_ids)
    if (!cases.count(id)) throw CaseError("missing preprocessed case " + id);

  Rng init_rng(Rng::mix(cfg.seed, 0x5eed0000ull + std::uint64_t(fold) * 1024 +
                                      std::uint64_t(run)));
  SegResNet<float> net = SegResNet<float>::build(cfg.network, init_rng);
  AdamW<float> opt(net.trainable_params(), float(cfg.train.weight_decay));

  FoldResult result;
  result.fold = fold;
  result.run = run;
  int start_epoch = 0;

  if (!resume_from.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume_from, arch_hash(cfg.network));
    for (const auto& name : net.param_names())
      net.param(name)->values = ck.net.param(name)->values;
    if (ck.has_opt) opt.restore(ck.opt_step, std::move(ck.opt_m), std::move(ck.opt_v));
    start_epoch = ck.meta.epoch + 1;
    result.best_val = ck.meta.best_val;
    result.best_epoch = ck.meta.best_epoch;
  }

  result.log_path = out_dir + "/train_log.jsonl";
  std::ofstream log(result.log_path,
                    resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + result.log_path);
  result.best_ckpt = out_dir + "/best.ckpt";
  result.last_ckpt = out_dir + "/last.ckpt";

  const int epochs = cfg.train.epochs;
  const int batch = std::max(1, cfg.train.batch_size);
  const int accum = std::max(1, cfg.train.grad_accum);

  for (int epoch = start_epoch; epoch < epochs; ++epoch) {
    const double lr = lr_for_epoch(epoch, epochs, cfg.train.lr0);
    Rng rng(Rng::mix(Rng::mix(cfg.seed, std::uint64_t(fold) * 7919 +
                                            std::uint64_t(run) + 31),
                     std::uint64_t(epoch)));

    std::vector<std::string> order = train_ids;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[std::size_t(rng.uniform_int(std::int64_t(i)))]);

    const int steps =
        cfg.train.steps_per_epoch > 0
            ? cfg.train.steps_per_epoch
            : int((order.size() + std::size_t(batch) - 1) / std::size_t(batch));

    std::size_t cursor = 0;
    auto next_case = [&]() -> const CaseRecord& {
      const std::string& id = order[cursor % order.size()];
      ++cursor;
      return cases.at(id);
    };

    double epoch_loss = 0.0, epoch_dice = 0.0, epoch_ce = 0.0;
    for (int step = 0; step < steps; ++step) {
      opt.zero_grad();
      double step_loss = 0.0, step_dice = 0.0, step_ce = 0.0;
      for (int a = 0; a < accum; ++a) {
        std::vector<Patch> patches;
        patches.reserve(std::size_t(batch));
        for (int bi = 0; bi < batch; ++bi) {
          Patch p = sample_patch(next_case(), cfg.sampler, rng);
          augment(p, cfg.augment, rng);
          patches.push_back(std::move(p));
        }
        Batch b = assemble_batch(patches);
        b.input->requires_grad = false;

        Graph<float> graph;
        auto outs = net.forward(&graph, b.input, /*training=*/true);
        DiceCeParts<float> parts{};
        Tensor<float> loss = deep_supervision_loss(&graph, outs, b.target,
                                                   cfg.loss, &parts);
        if (accum > 1) loss = scale(&graph, loss, 1.0f / float(accum));
        const double lval = double(loss->values[0]);
        if (!std::isfinite(lval)) {
          dump_diagnostics(out_dir + "/nan_diagnostics.json", epoch, step, lr,
                           lval, net);
          throw StateError("training aborted: non-finite loss at epoch " +
                           std::to_string(epoch) + " (diagnostics in " +
                           out_dir + "/nan_diagnostics.json)");
        }
        graph.backward(loss);
        step_loss += lval;
        step_dice += double(parts.dice) / accum;
        step_ce += double(parts.ce) / accum;
      }
      opt.step(float(lr));
      epoch_loss += step_loss;
      epoch_dice += step_dice;
      epoch_ce += step_ce;
      log << nlohmann::json{{"type", "step"}, {"epoch", epoch},
                            {"step", step},  {"lr", lr},
                            {"loss", step_loss}, {"dice", step_dice},
                            {"ce", step_ce}}
                 .dump()
          << "\n";
    }
    log << nlohmann::json{{"type", "epoch"},
                          {"epoch", epoch},
                          {"lr", lr},
                          {"loss", epoch_loss / steps},
                          {"dice", epoch_dice / steps},
                          {"ce", epoch_ce / steps}}
               .dump()
        << "\n";

    const bool do_val =
        ((epoch + 1) % std::max(1, cfg.train.val_every) == 0) || epoch == epochs - 1;
    if (do_val && !val_ids.empty()) {
      const double val = validate_fold(net, cfg, cases, val_ids);
      log << nlohmann::json{{"type", "val"}, {"epoch", epoch}, {"agg_dice", val}}
                 .dump()
          << "\n";
      if (val > result.best_val) {
        result.best_val = val;
        result.best_epoch = epoch;
        save_checkpoint(result.best_ckpt, net, &opt,
                        {epoch, result.best_val, result.best_epoch,
                         config_hash(cfg)});
      }
    }
    save_checkpoint(result.last_ckpt, net, &opt,
                    {epoch, result.best_val, result.best_epoch, config_hash(cfg)});
    log.flush();
  }

  if (result.best_val < 0) {
    // no validation happened (e.g. k = 1); keep the final weights as best
    save_checkpoint(result.best_ckpt, net, &opt,
                    {epochs - 1, result.best_val, result.best_epoch,
                     config_hash(cfg)});
  }
  result.final_param_hash = parameter_hash(net);
  return result;
}

void preprocess_corpus(const PipelineConfig& cfg, const std::string& corpus_dir,
                       const std::string& prep_dir) {
  std::vector<std::string> case_dirs;
  for (const auto& e : fs::directory_iterator(corpus_dir))
    if (e.is_directory() && fs::exists(e.path() / "ct.nii.gz"))
      case_dirs.push_back(e.path().string());
  std::sort(case_dirs.begin(), case_dirs.end());
  if (case_dirs.empty()) throw CaseError("no raw cases in " + corpus_dir);
  for (const auto& cdir : case_dirs) {
    const std::string id = fs::path(cdir).filename().string();
    const std::string dst = prep_dir + "/" + id;
    if (fs::exists(dst + "/sidecar.json")) continue;  // cached
    const ScalarVolume ct = read_nifti_scalar(cdir + "/ct.nii.gz");
    const ScalarVolume pet = read_nifti_scalar(cdir + "/pet.nii.gz");
    LabelVolume label;
    const LabelVolume* label_ptr = nullptr;
    if (fs::exists(cdir + "/label.nii.gz")) {
      label = read_nifti_labels(cdir + "/label.nii.gz");
      label_ptr = &label;
    }
    PreprocessedCase pc =
        preprocess_case(id, ct, pet, label_ptr, cfg.resample_spacing, cfg.crop,
                        cfg.normalization);
    save_case(dst, pc);
  }
}

CrossvalResult run_crossval(const PipelineConfig& cfg,
                            const std::string& corpus_dir,
                            const std::string& out_dir) {
  apply_execution(cfg.execution);
  fs::create_directories(out_dir);
  write_provenance(out_dir, cfg, "crossval");

  const std::string prep_dir = out_dir + "/prep";
  preprocess_corpus(cfg, corpus_dir, prep_dir);
  CaseMap cases = load_preprocessed_cases(prep_dir);

  std::vector<std::string> ids;
  for (const auto& [id, rec] : cases) ids.push_back(id);
  const auto folds = split_folds(ids, cfg.train.folds, cfg.seed);
  save_folds(out_dir + "/folds.json", folds);

  CrossvalResult result;
  const int k = cfg.train.folds, runs = cfg.train.runs;
  result.table.assign(std::size_t(runs), std::vector<double>(std::size_t(k), 0));
  for (int r = 0; r < runs; ++r) {
    double run_sum = 0.0;
    for (int f = 0; f < k; ++f) {
      const std::string dir =
          out_dir + "/fold" + std::to_string(f) + "_run" + std::to_string(r);
      FoldResult fr = train_fold(cfg, folds, cases, f, r, dir);
      run_sum += fr.best_val;
      result.table[std::size_t(r)][std::size_t(f)] = fr.best_val;
      result.fold_results.push_back(std::move(fr));
    }
    result.run_means.push_back(run_sum / k);
  }
  for (const double m : result.run_means) result.mean_val += m;
  result.mean_val /= double(runs);

  // report table: one row per run, fold columns plus the average
  {
    result.report_csv_path = out_dir + "/report.csv";
    result.report_md_path = out_dir + "/report.md";
    std::ofstream csv(result.report_csv_path);
    std::ofstream md(result.report_md_path);
    csv << "run";
    md << "| run |";
    for (int f = 1; f <= k; ++f) {
      csv << ",fold_" << f;
      md << " fold " << f << " |";
    }
    csv << ",average\n";
    md << " average |\n|---|";
    for (int f = 0; f <= k; ++f) md << "---|";
    md << "\n";
    char buf[32];
    for (int r = 0; r < runs; ++r) {
      csv << r + 1;
      md << "| " << r + 1 << " |";
      for (int f = 0; f < k; ++f) {
        std::snprintf(buf, sizeof(buf), "%.4f",
                      result.table[std::size_t(r)][std::size_t(f)]);
        csv << "," << buf;
        md << " " << buf << " |";
      }
      std::snprintf(buf, sizeof(buf), "%.4f", result.run_means[std::size_t(r)]);
      csv << "," << buf << "\n";
      md << " " << buf << " |\n";
    }
  }

  // held-out inference on the original CT grids, both submission styles
  std::vector<std::shared_ptr<SegResNet<float>>> all_models;
  std::map<int, std::shared_ptr<SegResNet<float>>> fold_model;  // run 0 models
  for (const auto& fr : result.fold_results) {
    auto ck = load_checkpoint(fr.best_ckpt, arch_hash(cfg.network));
    auto net = std::make_shared<SegResNet<float>>(std::move(ck.net));
    all_models.push_back(net);
    if (fr.run == 0) fold_model[fr.fold] = net;
  }

  fs::create_directories(out_dir + "/preds_one");
  fs::create_directories(out_dir + "/preds_two");
  InferenceConfig inf_one = cfg.inference;
  inf_one.tta = false;

  std::vector<std::string> eval_ids;
  std::vector<LabelVolume> preds_one, preds_two, gts;
  for (int f = 0; f < k; ++f) {
    for (const auto& id : folds[std::size_t(f)]) {
      const CaseRecord& rec = cases.at(id);
      const Tensor<float> input = make_network_input(rec.data.ct, rec.data.pet);
      const auto fills = channel_fills(rec.data.sidecar);
      const ImageGeometry crop_geom = rec.data.ct.geom;
      const ImageGeometry& ct_geom = rec.data.sidecar.original_ct;

      const ProbabilityMap pm_one = sliding_window(
          make_predictor(fold_model.at(f)), input, crop_geom, inf_one, fills);
      LabelVolume lab_one = finalize_prediction(pm_one, rec.data.sidecar, ct_geom);

      std::vector<ProbabilityMap> maps;
      maps.reserve(all_models.size());
      for (const auto& net : all_models)
        maps.push_back(tta_predict(make_predictor(net), input, crop_geom,
                                   cfg.inference, fills));
      LabelVolume lab_two = finalize_prediction(ensemble_mean(maps),
                                                rec.data.sidecar, ct_geom);

      write_nifti(lab_one, out_dir + "/preds_one/" + id + ".nii.gz");
      write_nifti(lab_two, out_dir + "/preds_two/" + id + ".nii.gz");

      LabelVolume gt = read_nifti_labels(corpus_dir + "/" + id + "/label.nii.gz");
      eval_ids.push_back(id);
      preds_one.push_back(std::move(lab_one));
      preds_two.push_back(std::move(lab_two));
      gts.push_back(std::move(gt));
    }
  }

  std::vector<std::pair<const LabelVolume*, const LabelVolume*>> pairs_one,
      pairs_two;
  for (std::size_t i = 0; i < eval_ids.size(); ++i) {
    pairs_one.emplace_back(&preds_one[i], &gts[i]);
    pairs_two.emplace_back(&preds_two[i], &gts[i]);
  }
  const EvalReport rep_one = evaluate_cases(eval_ids, pairs_one);
  const EvalReport rep_two = evaluate_cases(eval_ids, pairs_two);
  result.subone_mean_agg = rep_one.aggregated.mean;
  result.subtwo_mean_agg = rep_two.aggregated.mean;
  {
    std::ofstream f1(out_dir + "/eval_one.csv");
    f1 << report_to_csv(rep_one);
    std::ofstream f2(out_dir + "/eval_two.csv");
    f2 << report_to_csv(rep_two);
  }

  result.summary_path = out_dir + "/summary.json";
  nlohmann::json js{{"mean_val", result.mean_val},
                    {"run_means", result.run_means},
                    {"table", result.table},
                    {"subone_mean_agg", result.subone_mean_agg},
                    {"subtwo_mean_agg", result.subtwo_mean_agg},
                    {"config_hash", config_hash(cfg)}};
  std::ofstream sf(result.summary_path);
  sf << js.dump(2) << "\n";
  return result;
}

}  // namespace hnseg
