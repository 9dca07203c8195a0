#include "hnseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "hnseg/nifti.hpp"

namespace hnseg {

namespace {

struct Tallies {
  double inter[2] = {0, 0};
  double pred[2] = {0, 0};
  double gt[2] = {0, 0};
};

Tallies tally(const LabelVolume& pred, const LabelVolume& gt) {
  if (!(pred.geom == gt.geom))
    throw CaseError("dice: prediction and ground truth geometry mismatch");
  Tallies t;
  const std::size_t n = pred.labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t p = pred.labels[i], g = gt.labels[i];
    for (int c = 1; c <= 2; ++c) {
      t.pred[c - 1] += p == c;
      t.gt[c - 1] += g == c;
      t.inter[c - 1] += (p == c) && (g == c);
    }
  }
  return t;
}

}  // namespace

AggregatedDice aggregated_dice(
    const std::vector<std::pair<const LabelVolume*, const LabelVolume*>>& cases) {
  if (cases.empty()) throw ArgumentError("aggregated_dice: no cases");
  Tallies total;
  for (const auto& [pred, gt] : cases) {
    const Tallies t = tally(*pred, *gt);
    for (int c = 0; c < 2; ++c) {
      total.inter[c] += t.inter[c];
      total.pred[c] += t.pred[c];
      total.gt[c] += t.gt[c];
    }
  }
  AggregatedDice out;
  for (int c = 0; c < 2; ++c) {
    const double den = total.pred[c] + total.gt[c];
    if (den == 0.0) {
      out.per_class[c] = 1.0;  // vacuous perfection, flagged
      out.vacuous[c] = true;
    } else {
      out.per_class[c] = 2.0 * total.inter[c] / den;
    }
  }
  out.mean = 0.5 * (out.per_class[0] + out.per_class[1]);
  return out;
}

double per_case_dice(const LabelVolume& pred, const LabelVolume& gt, int cls) {
  if (cls < 1 || cls > 2) throw ArgumentError("per_case_dice: class must be 1 or 2");
  const Tallies t = tally(pred, gt);
  const double den = t.pred[cls - 1] + t.gt[cls - 1];
  if (den == 0.0) return 1.0;
  return 2.0 * t.inter[cls - 1] / den;
}

EvalReport evaluate_cases(
    const std::vector<std::string>& ids,
    const std::vector<std::pair<const LabelVolume*, const LabelVolume*>>& cases) {
  if (ids.size() != cases.size())
    throw ArgumentError("evaluate_cases: id/case count mismatch");
  EvalReport report;
  for (std::size_t i = 0; i < cases.size(); ++i)
    report.rows.push_back({ids[i],
                           per_case_dice(*cases[i].first, *cases[i].second, 1),
                           per_case_dice(*cases[i].first, *cases[i].second, 2)});
  report.aggregated = aggregated_dice(cases);
  return report;
}

std::string report_to_csv(const EvalReport& report) {
  std::string out = "case,dice_gtvp,dice_gtvn\n";
  char buf[128];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", row.case_id.c_str(),
                  row.dice_gtvp, row.dice_gtvn);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "AGGREGATED,%.6f,%.6f\n",
                report.aggregated.per_class[0], report.aggregated.per_class[1]);
  out += buf;
  std::snprintf(buf, sizeof(buf), "MEAN_AGGREGATED,%.6f,%.6f\n",
                report.aggregated.mean, report.aggregated.mean);
  out += buf;
  for (int c = 0; c < 2; ++c)
    if (report.aggregated.vacuous[c]) {
      std::snprintf(buf, sizeof(buf),
                    "# WARNING: class %d absent in all preds and gts\n", c + 1);
      out += buf;
    }
  return out;
}

EvalReport evaluate_directories(const std::string& pred_dir,
                                const std::string& gt_dir) {
  namespace fs = std::filesystem;
  auto stem_of = [](const fs::path& p) {
    std::string s = p.filename().string();
    for (const char* suffix : {".nii.gz", ".nii"}) {
      const std::size_t len = std::string(suffix).size();
      if (s.size() > len && s.compare(s.size() - len, len, suffix) == 0)
        return s.substr(0, s.size() - len);
    }
    return s;
  };
  std::map<std::string, fs::path> preds, gts;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_regular_file()) preds[stem_of(e.path())] = e.path();
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file()) gts[stem_of(e.path())] = e.path();

  std::vector<std::string> ids;
  std::vector<LabelVolume> pv, gv;
  for (const auto& [stem, path] : preds) {
    auto it = gts.find(stem);
    if (it == gts.end())
      throw CaseError("evaluate: no ground truth for " + stem);
    ids.push_back(stem);
    pv.push_back(read_nifti_labels(path.string()));
    gv.push_back(read_nifti_labels(it->second.string()));
  }
  if (ids.empty()) throw CaseError("evaluate: no prediction files found");
  std::vector<std::pair<const LabelVolume*, const LabelVolume*>> cases;
  for (std::size_t i = 0; i < ids.size(); ++i)
    cases.emplace_back(&pv[i], &gv[i]);
  return evaluate_cases(ids, cases);
}

}  // namespace hnseg
