#pragma once

#include <vector>

#include "faim/model.hpp"
#include "faim/params.hpp"
#include "faim/tensor.hpp"

namespace faim {

struct FeatureMap {
  Tensor tensor;  // [C,H,W] neck feature
  int stride = 0;
  Level level = Level::P3;
};

struct RawPrediction {
  Tensor class_logits;  // [num_classes,H,W]
  Tensor box_offsets;   // [4,H,W] (l,t,r,b) cell-center distances in stride units, positive
  Tensor objectness;    // [1,H,W]
};

struct VideoObjectFeatures {
  Tensor f_cls;        // [C,H,W]
  Tensor f_ins_input;  // [C,H,W], fed to IFEM
};

struct LevelOutput {
  FeatureMap neck;
  RawPrediction raw;
  VideoObjectFeatures vob;  // undefined tensors when the branch is skipped
};

struct DetectorOutput {
  std::vector<LevelOutput> levels;  // P3, P4, P5
  int image_h = 0, image_w = 0;
};

// One candidate per feature-map cell.
struct Candidate {
  Box box;
  float score = 0;  // sigmoid(obj) * sigmoid(best class logit)
  int class_id = 0;
  std::vector<float> class_scores;
  int level = 0;
  int cell_r = 0, cell_c = 0;
};

void add_detector_params(Parameters& p, const ModelConfig& cfg);

// Backbone with stride-2 avg-pool downsamples, per-level 1x1 neck, shared
// decoupled heads and (optionally) the two-conv video object branch.
// H and W must be divisible by 32; levels come out at strides 8/16/32.
DetectorOutput detector_forward(const Tensor& frame, const Parameters& p, const ModelConfig& cfg,
                                bool with_video_branch);

// Anchor-free decode: cell (r,c) at stride s yields a box centered at
// ((c+0.5)s,(r+0.5)s) expanded by offsets*s, clamped to image bounds.
std::vector<Candidate> decode(const RawPrediction& raw, int stride, int image_h, int image_w);

struct PositiveCell {
  int level = 0;
  int cell_r = 0, cell_c = 0;
  int gt_index = 0;
};

// Positive assignment: a cell is positive when its center lies inside a GT
// box routed to that level by box size (<24px -> P3, <48px -> P4, else P5);
// overlaps resolved toward the smaller box, then the lower GT index.
std::vector<PositiveCell> assign_positives(const std::vector<GtObject>& gts,
                                           const std::vector<std::array<int, 2>>& level_dims,
                                           const std::vector<int>& strides);

// BCE on objectness over every cell, BCE on class logits at positive cells,
// and (1 - IoU) between decoded and GT boxes at positive cells, all summed
// and normalized by the positive count:
//   L = [sum_cells BCE(obj) + sum_pos sum_c BCE(cls) + sum_pos (1-IoU)] / max(1, Npos).
Tensor detection_loss(const DetectorOutput& out, const std::vector<GtObject>& gts,
                      const ModelConfig& cfg);

}  // namespace faim
