#include "faim/pipeline.hpp"

#include <stdexcept>

#include "faim/ops.hpp"

namespace faim {

Pipeline build_pipeline(const ModelConfig& cfg, uint64_t seed, bool with_mask_branch) {
  Pipeline pipe{cfg, Parameters(seed), with_mask_branch};
  add_detector_params(pipe.params, cfg);
  add_ifem_params(pipe.params, cfg);
  add_ticam_params(pipe.params, cfg);
  if (with_mask_branch) add_maskhead_params(pipe.params, cfg);
  return pipe;
}

FrameContext forward_frame(const Pipeline& pipe, const Tensor& frame, bool with_video_branch,
                           bool with_ifem) {
  FrameContext ctx;
  ctx.det = detector_forward(frame, pipe.params, pipe.model, with_video_branch);
  for (const LevelOutput& lo : ctx.det.levels) {
    std::vector<Candidate> cands =
        decode(lo.raw, lo.neck.stride, ctx.det.image_h, ctx.det.image_w);
    ctx.candidates.insert(ctx.candidates.end(), cands.begin(), cands.end());
    if (with_video_branch) {
      ctx.f_cls_levels.push_back(lo.vob.f_cls);
      if (with_ifem) {
        ctx.f_ins_levels.push_back(
            ifem_extract(lo.vob.f_ins_input, pipe.params, lo.neck.level).tensor);
      }
    }
  }
  return ctx;
}

namespace {

// Average feature inside the box: RoIAlign to a single bin with a 4x4 sample
// grid on the proposal's own level.
Tensor box_pooled_feature(const Pipeline& pipe, const FrameContext& ctx, const Box& box,
                          int level) {
  const FeatureMap& neck = ctx.det.levels[static_cast<size_t>(level)].neck;
  const float s = static_cast<float>(neck.stride);
  Box scaled{box.x1 / s, box.y1 / s, box.x2 / s, box.y2 / s};
  Tensor pooled = roi_align(neck.tensor, scaled, 1, 1, 4);
  return reshape(pooled, {pipe.model.channels});
}

}  // namespace

ProposalSet select_proposals(const Pipeline& pipe, const FrameContext& ctx, int frame_index, int k,
                             float nms_threshold, int n_cap) {
  const bool mask_mode = pipe.model.aggregation == Aggregation::MaskFeatures;
  ProposalSet set = fpsm_select(ctx.candidates, ctx.f_cls_levels,
                                mask_mode ? ctx.f_ins_levels : std::vector<Tensor>{}, frame_index,
                                k, nms_threshold, n_cap);
  if (pipe.model.aggregation == Aggregation::BoxFeatures && set.size() > 0) {
    std::vector<Tensor> rows;
    rows.reserve(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
      rows.push_back(box_pooled_feature(pipe, ctx, set.boxes[i], set.cells[i][0]));
    }
    set.ins_feats = stack_rows(rows);
  }
  return set;
}

std::vector<FinalDetection> infer_clip(const Pipeline& pipe, const std::vector<Tensor>& frames,
                                       const RuntimeConfig& rt) {
  if (frames.empty()) return {};
  const Aggregation agg = pipe.model.aggregation;
  std::vector<FinalDetection> dets;
  const int chunk = std::max(1, rt.m_infer);
  for (size_t begin = 0; begin < frames.size(); begin += static_cast<size_t>(chunk)) {
    const size_t end = std::min(frames.size(), begin + static_cast<size_t>(chunk));
    std::vector<ProposalSet> sets;
    for (size_t t = begin; t < end; ++t) {
      FrameContext ctx = forward_frame(pipe, frames[t], agg != Aggregation::None,
                                       agg == Aggregation::MaskFeatures);
      sets.push_back(select_proposals(pipe, ctx, static_cast<int>(t), rt.k, rt.nms_infer,
                                      rt.n_cap));
    }
    if (agg == Aggregation::None) {
      for (const ProposalSet& set : sets) {
        for (size_t j = 0; j < set.size(); ++j) {
          dets.push_back(FinalDetection{set.frame_index, set.boxes[j], set.class_ids[j],
                                        set.scores[j]});
        }
      }
      continue;
    }
    bool any = false;
    for (const ProposalSet& set : sets) any = any || set.size() > 0;
    if (!any) continue;
    QueryBank bank = build_queries(sets, pipe.params, pipe.model);
    AggregatedFeatures agg_out = ticam_aggregate(bank, pipe.params, pipe.model.heads);
    std::vector<FinalDetection> chunk_dets =
        final_detections(sets, bank, agg_out, pipe.model.score_mode);
    dets.insert(dets.end(), chunk_dets.begin(), chunk_dets.end());
  }
  return dets;
}

}  // namespace faim
