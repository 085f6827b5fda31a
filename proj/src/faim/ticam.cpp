#include "faim/ticam.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "faim/ops.hpp"

namespace faim {

void add_ticam_params(Parameters& p, const ModelConfig& cfg) {
  const int d = cfg.feature_dim;
  p.add_linear("ticam.lp_cls.w", d, cfg.channels);
  p.add_zeros("ticam.lp_cls.b", {d});
  p.add_linear("ticam.lp_ins.w", d, cfg.ins_query_dim());
  p.add_zeros("ticam.lp_ins.b", {d});
  for (const char* blk : {"attn_cls", "attn_ins"}) {
    for (const char* mat : {"wq", "wk", "wv", "wo"}) {
      p.add_linear(std::string("ticam.") + blk + "." + mat, d, d);
    }
    for (const char* vec : {"bq", "bk", "bv", "bo"}) {
      p.add_zeros(std::string("ticam.") + blk + "." + vec, {d});
    }
  }
  p.add_linear("ticam.fuse.w", d, 2 * d);
  p.add_zeros("ticam.fuse.b", {d});
  p.add_linear("ticam.head.w", cfg.num_classes, d);
  p.add_zeros("ticam.head.b", {cfg.num_classes});
}

QueryBank build_queries(const std::vector<ProposalSet>& sets, const Parameters& p,
                        const ModelConfig& cfg) {
  (void)cfg;
  QueryBank bank;
  std::vector<Tensor> cls_blocks, ins_blocks;
  std::unordered_map<int, int> seen_frames;
  for (const ProposalSet& set : sets) {
    if (set.size() == 0) continue;
    cls_blocks.push_back(set.cls_feats);
    ins_blocks.push_back(set.ins_feats);
    for (size_t j = 0; j < set.size(); ++j) {
      bank.origin.emplace_back(set.frame_index, static_cast<int>(j));
    }
    seen_frames.emplace(set.frame_index, 1);
  }
  if (cls_blocks.empty()) throw std::runtime_error("build_queries: no proposals in clip");
  bank.q_cls = linear(concat_rows(cls_blocks), p.get("ticam.lp_cls.w"), p.get("ticam.lp_cls.b"));
  bank.q_ins = linear(concat_rows(ins_blocks), p.get("ticam.lp_ins.w"), p.get("ticam.lp_ins.b"));
  bank.m_frames = static_cast<int>(seen_frames.size());
  return bank;
}

AggregatedFeatures ticam_aggregate(const QueryBank& bank, const Parameters& p, int heads) {
  if (!bank.q_cls.defined() || bank.q_cls.dim(0) == 0) {
    throw std::invalid_argument("ticam_aggregate: empty bank");
  }
  if (bank.q_cls.dim(0) != bank.q_ins.dim(0) ||
      static_cast<size_t>(bank.q_cls.dim(0)) != bank.origin.size()) {
    throw std::invalid_argument("ticam_aggregate: bank rows misaligned with origins");
  }
  // Standard residual blocks: attention refines each query with cross-frame
  // context without erasing the per-proposal identity.
  Tensor a_cls = add(bank.q_cls, multi_head_attention(bank.q_cls, bank.q_cls, bank.q_cls, p,
                                                      "ticam.attn_cls", heads));
  Tensor a_ins = add(bank.q_ins, multi_head_attention(bank.q_ins, bank.q_ins, bank.q_ins, p,
                                                      "ticam.attn_ins", heads));
  Tensor fused = linear(concat_lastdim(a_cls, a_ins), p.get("ticam.fuse.w"), p.get("ticam.fuse.b"));
  AggregatedFeatures agg;
  agg.features = fused;
  agg.class_logits = linear(fused, p.get("ticam.head.w"), p.get("ticam.head.b"));
  return agg;
}

std::vector<FinalDetection> final_detections(const std::vector<ProposalSet>& sets,
                                             const QueryBank& bank, const AggregatedFeatures& agg,
                                             ScoreMode mode) {
  if (static_cast<size_t>(agg.class_logits.dim(0)) != bank.origin.size()) {
    throw std::invalid_argument("final_detections: logits misaligned with origins");
  }
  std::unordered_map<int, const ProposalSet*> by_frame;
  for (const ProposalSet& set : sets) by_frame[set.frame_index] = &set;

  const int num_classes = agg.class_logits.dim(1);
  std::vector<FinalDetection> dets;
  dets.reserve(bank.origin.size());
  for (size_t row = 0; row < bank.origin.size(); ++row) {
    const auto [frame, j] = bank.origin[row];
    auto it = by_frame.find(frame);
    if (it == by_frame.end() || j < 0 || static_cast<size_t>(j) >= it->second->size()) {
      throw std::invalid_argument("final_detections: origin refers to a missing proposal");
    }
    const float* logits = agg.class_logits.data() + row * static_cast<size_t>(num_classes);
    double m = logits[0];
    for (int k = 1; k < num_classes; ++k) m = std::max(m, static_cast<double>(logits[k]));
    double denom = 0.0;
    for (int k = 0; k < num_classes; ++k) denom += std::exp(static_cast<double>(logits[k]) - m);
    int best = 0;
    for (int k = 1; k < num_classes; ++k) {
      if (logits[k] > logits[best]) best = k;
    }
    FinalDetection det;
    det.frame_index = frame;
    det.box = it->second->boxes[static_cast<size_t>(j)];
    det.class_id = best;
    det.score = static_cast<float>(std::exp(static_cast<double>(logits[best]) - m) / denom);
    if (mode == ScoreMode::Multiply) det.score *= it->second->scores[static_cast<size_t>(j)];
    dets.push_back(det);
  }
  return dets;
}

}  // namespace faim
