#pragma once

#include <vector>

#include "faim/detector.hpp"
#include "faim/fpsm.hpp"
#include "faim/ifem.hpp"
#include "faim/maskhead.hpp"
#include "faim/ticam.hpp"

namespace faim {

// Per-run knobs that are not part of the model structure.
struct RuntimeConfig {
  int k = 750;
  int n_cap = 30;
  float nms_train = 0.75f;
  float nms_infer = 0.5f;
  int m_train = 16;
  int m_infer = 32;
};

struct Pipeline {
  ModelConfig model;
  Parameters params;
  bool has_mask_branch = true;
};

// Builds and initializes every module's parameters. The mask branch can be
// left out entirely, which must not change the inference path.
Pipeline build_pipeline(const ModelConfig& cfg, uint64_t seed, bool with_mask_branch = true);

struct FrameContext {
  DetectorOutput det;
  std::vector<Tensor> f_cls_levels;  // video-branch classification features
  std::vector<Tensor> f_ins_levels;  // IFEM outputs (mask aggregation only)
  std::vector<Candidate> candidates;
};

FrameContext forward_frame(const Pipeline& pipe, const Tensor& frame, bool with_video_branch,
                           bool with_ifem);

// FPSM selection plus mode-dependent instance features: gathered IFEM cell
// features for mask aggregation, box-pooled neck features (RoIAlign averaged
// over the box) for the box baseline, none for single-frame mode.
ProposalSet select_proposals(const Pipeline& pipe, const FrameContext& ctx, int frame_index, int k,
                             float nms_threshold, int n_cap);

// Aggregated inference over one clip. Frames are processed in consecutive
// chunks of at most m_infer; every chunk's proposals attend to each other.
// aggregation == None bypasses TICAM and reports FPSM scores directly.
std::vector<FinalDetection> infer_clip(const Pipeline& pipe, const std::vector<Tensor>& frames,
                                       const RuntimeConfig& rt);

}  // namespace faim
