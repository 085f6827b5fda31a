#pragma once

#include <utility>
#include <vector>

#include "faim/fpsm.hpp"
#include "faim/model.hpp"
#include "faim/params.hpp"

namespace faim {

// Stacked, linearly projected classification and instance queries over the
// sampled frames. Rows of q_cls/q_ins are aligned with `origin`.
struct QueryBank {
  Tensor q_cls;  // [rows, D]
  Tensor q_ins;  // [rows, D]
  std::vector<std::pair<int, int>> origin;  // (frame_index, proposal_index)
  int m_frames = 0;
};

struct AggregatedFeatures {
  Tensor features;      // [rows, D] fused
  Tensor class_logits;  // [rows, num_classes]
};

struct FinalDetection {
  int frame_index = 0;
  Box box;
  int class_id = 0;
  float score = 0;
};

void add_ticam_params(Parameters& p, const ModelConfig& cfg);

// Projects per-proposal features of every (non-empty) ProposalSet and stacks
// them into one bank. Throws when no proposals exist in the clip.
QueryBank build_queries(const std::vector<ProposalSet>& sets, const Parameters& p,
                        const ModelConfig& cfg);

// Two self-attention blocks (classification and instance modalities) whose
// outputs are concatenated, linearly fused, and classified.
AggregatedFeatures ticam_aggregate(const QueryBank& bank, const Parameters& p, int heads);

// Boxes pass through from FPSM; class and score come from the softmaxed
// aggregated logits (optionally multiplied with the FPSM score).
std::vector<FinalDetection> final_detections(const std::vector<ProposalSet>& sets,
                                             const QueryBank& bank, const AggregatedFeatures& agg,
                                             ScoreMode mode);

}  // namespace faim
