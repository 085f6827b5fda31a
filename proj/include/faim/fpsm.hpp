#pragma once

#include <array>
#include <vector>

#include "faim/detector.hpp"

namespace faim {

// Refined predictions for one frame with row-aligned features: row i of
// cls_feats/ins_feats belongs to the cell that produced boxes[i].
struct ProposalSet {
  int frame_index = 0;
  std::vector<Box> boxes;
  std::vector<float> scores;  // descending
  std::vector<int> class_ids;
  std::vector<std::array<int, 3>> cells;  // (level, cell_r, cell_c)
  Tensor cls_feats;                       // [n, C]
  Tensor ins_feats;                       // [n, C'] (or box-pooled features)
  size_t size() const { return boxes.size(); }
};

// Top-k by confidence, class-agnostic NMS, truncation to n_cap, then feature
// gathering at the surviving cells. Degenerate (zero-area) candidates are
// dropped before ranking. Empty input yields an empty set.
ProposalSet fpsm_select(const std::vector<Candidate>& candidates,
                        const std::vector<Tensor>& f_cls_levels,
                        const std::vector<Tensor>& f_ins_levels, int frame_index, int k,
                        float nms_threshold, int n_cap);

}  // namespace faim
