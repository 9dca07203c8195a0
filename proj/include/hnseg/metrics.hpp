#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hnseg/volume.hpp"

namespace hnseg {

struct AggregatedDice {
  double per_class[2] = {0.0, 0.0};  // class 1 (GTVp), class 2 (GTVn)
  bool vacuous[2] = {false, false};  // class absent in every pred and gt
  double mean = 0.0;
};

// Challenge-style aggregated Dice: intersection and size tallies are pooled
// over all cases before the ratio, per class, then the two classes are
// averaged. A class absent from every pred and gt scores 1.0 and is flagged.
AggregatedDice aggregated_dice(
    const std::vector<std::pair<const LabelVolume*, const LabelVolume*>>& cases);

// Conventional per-case Dice; both masks empty -> 1.0.
double per_case_dice(const LabelVolume& pred, const LabelVolume& gt, int cls);

struct EvalRow {
  std::string case_id;
  double dice_gtvp = 0.0;
  double dice_gtvn = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  AggregatedDice aggregated;
};

EvalReport evaluate_cases(
    const std::vector<std::string>& ids,
    const std::vector<std::pair<const LabelVolume*, const LabelVolume*>>& cases);

// CSV: case,dice_gtvp,dice_gtvn rows plus AGGREGATED / MEAN_AGGREGATED footer.
std::string report_to_csv(const EvalReport& report);

// Matches prediction files to ground-truth files by filename stem.
EvalReport evaluate_directories(const std::string& pred_dir,
                                const std::string& gt_dir);

}  // namespace hnseg
