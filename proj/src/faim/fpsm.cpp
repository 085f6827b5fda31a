#include "faim/fpsm.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "faim/ops.hpp"

namespace faim {

ProposalSet fpsm_select(const std::vector<Candidate>& candidates,
                        const std::vector<Tensor>& f_cls_levels,
                        const std::vector<Tensor>& f_ins_levels, int frame_index, int k,
                        float nms_threshold, int n_cap) {
  if (n_cap < 1 || k < n_cap) throw std::invalid_argument("fpsm_select: need k >= n_cap >= 1");
  if (!(nms_threshold > 0.0f && nms_threshold <= 1.0f)) {
    throw std::invalid_argument("fpsm_select: nms_threshold must be in (0,1]");
  }

  ProposalSet set;
  set.frame_index = frame_index;

  std::vector<int> usable;
  usable.reserve(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].box.valid()) usable.push_back(static_cast<int>(i));
  }
  if (usable.empty()) return set;

  std::stable_sort(usable.begin(), usable.end(), [&candidates](int a, int b) {
    if (candidates[a].score != candidates[b].score) {
      return candidates[a].score > candidates[b].score;
    }
    return a < b;
  });
  if (static_cast<int>(usable.size()) > k) usable.resize(static_cast<size_t>(k));

  std::vector<ScoredBox> ranked;
  ranked.reserve(usable.size());
  for (int idx : usable) ranked.push_back({candidates[static_cast<size_t>(idx)].box,
                                           candidates[static_cast<size_t>(idx)].score});
  std::vector<int> kept = nms(ranked, nms_threshold);
  if (static_cast<int>(kept.size()) > n_cap) kept.resize(static_cast<size_t>(n_cap));

  std::vector<Tensor> cls_rows, ins_rows;
  for (int ki : kept) {
    const Candidate& cand = candidates[static_cast<size_t>(usable[static_cast<size_t>(ki)])];
    set.boxes.push_back(cand.box);
    set.scores.push_back(cand.score);
    set.class_ids.push_back(cand.class_id);
    set.cells.push_back({cand.level, cand.cell_r, cand.cell_c});
    if (!f_cls_levels.empty()) {
      cls_rows.push_back(gather_cell(f_cls_levels[static_cast<size_t>(cand.level)], cand.cell_r,
                                     cand.cell_c));
    }
    if (!f_ins_levels.empty()) {
      ins_rows.push_back(gather_cell(f_ins_levels[static_cast<size_t>(cand.level)], cand.cell_r,
                                     cand.cell_c));
    }
  }
  if (!cls_rows.empty()) set.cls_feats = stack_rows(cls_rows);
  if (!ins_rows.empty()) set.ins_feats = stack_rows(ins_rows);
  return set;
}

}  // namespace faim
