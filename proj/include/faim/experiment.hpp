#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "faim/config.hpp"
#include "faim/dataset.hpp"
#include "faim/eval.hpp"
#include "faim/pipeline.hpp"

namespace faim {

// Runs aggregated inference over a split and scores it; bucketed mAP50 is
// attached when with_buckets is set. Clips are evaluated in parallel.
EvalReport evaluate_dataset(const Pipeline& pipe, const Dataset& ds, const RuntimeConfig& rt,
                            const std::string& split, bool with_buckets, int threads = 0);

// Copies tensors whose names start with one of the prefixes (shapes must
// match); used to transplant a pretrained base into a fresh pipeline.
void copy_params_by_prefix(Parameters& dst, const Parameters& src,
                           const std::vector<std::string>& prefixes);

// Per-object pooled features on the occluded validation clips, grouped by
// class: "box" averages the neck feature over the GT box, "mask" averages it
// over the GT mask pixels only.
struct PooledVariance {
  VarianceReport box;
  VarianceReport mask;
};
PooledVariance occlusion_variance(const Pipeline& pipe, const Dataset& ds);

struct SeedOutcome {
  uint64_t seed = 0;
  std::map<std::string, double> map50;  // mode name -> mAP50
  double var_ratio_box = 0, var_ratio_mask = 0;
  bool order_holds = false;     // mask >= box >= none
  bool variance_holds = false;  // ratio(mask) < ratio(box)
};

struct DeskAblationResult {
  std::vector<SeedOutcome> seeds;
  int order_holds = 0;
  int variance_holds = 0;
  double mean_gain_points = 0;  // mean over seeds of 100*(map50_mask - map50_none)
};

// The three-way aggregation comparison: per seed, pretrain the base detector,
// fine-tune the box and mask variants from it, evaluate all three modes on
// the val split and compute the occlusion variance ratios. Seeds run in
// parallel two at a time.
DeskAblationResult run_desk_ablation(const RunConfig& base, const Dataset& ds, int pretrain_iters,
                                     int finetune_iters, const std::vector<uint64_t>& seeds,
                                     std::ostream* progress);

// Single-seed sweep over one config axis (loss, class_aware, roi_size,
// fpn_level, n_cap, m); returns (value label, mAP50) rows.
std::vector<std::pair<std::string, double>> run_axis_ablation(const RunConfig& base,
                                                              const Dataset& ds,
                                                              const std::string& axis,
                                                              int pretrain_iters,
                                                              int finetune_iters,
                                                              std::ostream* progress);

}  // namespace faim
