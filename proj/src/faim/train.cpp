#include "faim/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "faim/fvt.hpp"
#include "faim/ops.hpp"
#include "faim/rng.hpp"

namespace faim {

namespace fs = std::filesystem;

double cosine_lr(int it, const TrainConfig& cfg) {
  if (it < 0 || it > cfg.total_iters) throw std::invalid_argument("cosine_lr: it out of range");
  if (it < cfg.warmup_iters) {
    return cfg.base_lr * static_cast<double>(it) / static_cast<double>(cfg.warmup_iters);
  }
  // Exact schedule endpoints (cos(M_PI) is only almost -1).
  if (it == cfg.warmup_iters) return cfg.base_lr;
  if (it == cfg.total_iters) return cfg.min_lr;
  const double span = static_cast<double>(cfg.total_iters - cfg.warmup_iters);
  const double t = static_cast<double>(it - cfg.warmup_iters) / span;
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(M_PI * t));
}

namespace {
const char* kBasePrefixes[] = {"backbone.", "neck.", "head."};
const char* kNewPrefixes[] = {"vob.", "ifem.", "ticam.", "mask."};

bool has_prefix(const std::string& name, const char* prefix) {
  return name.rfind(prefix, 0) == 0;
}
}  // namespace

std::vector<std::string> trainable_names(const Parameters& p, TrainPhase phase, bool freeze_base) {
  std::vector<std::string> out;
  for (const std::string& name : p.names()) {
    bool base = false, added = false;
    for (const char* pre : kBasePrefixes) base = base || has_prefix(name, pre);
    for (const char* pre : kNewPrefixes) added = added || has_prefix(name, pre);
    if (phase == TrainPhase::Pretrain) {
      if (base) out.push_back(name);
    } else {
      if (added || (base && !freeze_base)) out.push_back(name);
    }
  }
  return out;
}

void init_video_branch_from_head(Parameters& p) {
  for (const auto& [src, dst] : {std::pair<const char*, const char*>{"head.cls1", "vob.c1"},
                                 {"head.cls2", "vob.c2"}}) {
    for (const char* suffix : {".w", ".b"}) {
      const Tensor& s = p.get(std::string(src) + suffix);
      Tensor& d = p.get(std::string(dst) + suffix);
      std::copy(s.data(), s.data() + s.numel(), d.data());
    }
  }
  for (const char* name : {"vob.cls", "vob.ins"}) {
    Tensor& w = p.get(std::string(name) + ".w");
    const int cout = w.dim(0), cin = w.dim(1);
    std::fill(w.data(), w.data() + w.numel(), 0.0f);
    for (int o = 0; o < std::min(cout, cin); ++o) {
      w.data()[static_cast<int64_t>(o) * cin + o] = 1.0f;
    }
    Tensor& b = p.get(std::string(name) + ".b");
    std::fill(b.data(), b.data() + b.numel(), 0.0f);
  }
}

void SgdOptimizer::step(Parameters& params, const std::vector<std::string>& names, double lr) {
  for (const std::string& name : names) {
    Tensor& t = params.get(name);
    auto& v = velocity_[name];
    if (v.size() != static_cast<size_t>(t.numel())) v.assign(static_cast<size_t>(t.numel()), 0.0f);
    const bool has_g = t.has_grad();
    float* data = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float g = has_g ? static_cast<float>(t.grad()[i]) : 0.0f;
      v[static_cast<size_t>(i)] = static_cast<float>(momentum_ * v[static_cast<size_t>(i)] + g);
      data[i] = static_cast<float>(data[i] - lr * v[static_cast<size_t>(i)]);
    }
  }
}

namespace {

std::vector<GtObject> to_gts(const DatasetFrame& fr) {
  std::vector<GtObject> gts;
  for (const Annotation& a : fr.objects) gts.push_back({a.box, a.class_id});
  return gts;
}

void check_loss_finite(double v) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(
        "training aborted: non-finite loss (dumped state: lr/seed/iteration in metrics log)");
  }
}

}  // namespace

LossBreakdown pretrain_step(Pipeline& pipe, const std::vector<const DatasetFrame*>& frames,
                            SgdOptimizer& opt, double lr, const TrainConfig& tc) {
  pipe.params.zero_grad();
  std::vector<Tensor> losses;
  for (const DatasetFrame* fr : frames) {
    DetectorOutput out = detector_forward(fr->image, pipe.params, pipe.model, false);
    losses.push_back(detection_loss(out, to_gts(*fr), pipe.model));
  }
  Tensor loss = scale(add_n(losses), 1.0 / static_cast<double>(losses.size()));
  check_loss_finite(loss.scalar64());
  loss.backward();
  opt.step(pipe.params, trainable_names(pipe.params, TrainPhase::Pretrain, false), lr);
  return total_loss(loss.scalar64(), 0.0, tc.lambda);
}

LossBreakdown finetune_step(Pipeline& pipe, const DatasetClip& clip,
                            const std::vector<int>& frame_ids, const RuntimeConfig& rt,
                            SgdOptimizer& opt, double lr, const TrainConfig& tc) {
  const Aggregation agg = pipe.model.aggregation;
  pipe.params.zero_grad();

  std::vector<ProposalSet> sets;
  std::vector<FrameContext> contexts;
  for (int fi : frame_ids) {
    FrameContext ctx = forward_frame(pipe, clip.frames[static_cast<size_t>(fi)].image, true,
                                     agg == Aggregation::MaskFeatures);
    sets.push_back(select_proposals(pipe, ctx, fi, rt.k, rt.nms_train, rt.n_cap));
    contexts.push_back(std::move(ctx));
  }
  bool any = false;
  for (const ProposalSet& s : sets) any = any || s.size() > 0;
  if (!any) return total_loss(0.0, 0.0, tc.lambda);  // nothing to learn from this sample

  QueryBank bank = build_queries(sets, pipe.params, pipe.model);
  AggregatedFeatures aggf = ticam_aggregate(bank, pipe.params, pipe.model.heads);

  // Classification loss on positive rows (IoU >= 0.5 against the frame's GT
  // picks the class). Background rows carry no class target; their ranking at
  // inference comes from the FPSM confidence.
  const int num_classes = pipe.model.num_classes;
  std::vector<int> pos_rows;
  std::vector<float> pos_targets;
  for (size_t row = 0; row < bank.origin.size(); ++row) {
    const auto [frame, j] = bank.origin[row];
    const ProposalSet* set = nullptr;
    for (const ProposalSet& s : sets) {
      if (s.frame_index == frame) set = &s;
    }
    const DatasetFrame& fr = clip.frames[static_cast<size_t>(frame)];
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < fr.objects.size(); ++g) {
      const double v = iou(set->boxes[static_cast<size_t>(j)], fr.objects[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= 0.5) {
      pos_rows.push_back(static_cast<int>(row));
      std::vector<float> one_hot(static_cast<size_t>(num_classes), 0.0f);
      one_hot[static_cast<size_t>(fr.objects[static_cast<size_t>(best_gt)].class_id)] = 1.0f;
      pos_targets.insert(pos_targets.end(), one_hot.begin(), one_hot.end());
    }
  }
  Tensor l_det = Tensor::scalar(0.0);
  if (!pos_rows.empty()) {
    Tensor target_t = Tensor::from_data({static_cast<int>(pos_rows.size()), num_classes},
                                        std::move(pos_targets));
    l_det = softmax_xent_mean(gather_rows(aggf.class_logits, pos_rows), target_t);
  }

  Tensor l_mask = Tensor::scalar(0.0);
  if (agg == Aggregation::MaskFeatures && pipe.has_mask_branch && tc.lambda != 0.0) {
    // Mask supervision on the first sampled frame that has proposals and GT.
    for (size_t si = 0; si < sets.size(); ++si) {
      const ProposalSet& set = sets[si];
      const DatasetFrame& fr = clip.frames[static_cast<size_t>(set.frame_index)];
      if (set.size() == 0 || fr.objects.empty()) continue;

      const int n_mask = std::min<int>(static_cast<int>(set.size()), tc.mask_train_cap);
      std::vector<Box> boxes(set.boxes.begin(), set.boxes.begin() + n_mask);
      const int level_idx = static_cast<int>(pipe.model.mask_level);
      PooledFeatures pooled = pool_instance_features(
          contexts[si].f_ins_levels[static_cast<size_t>(level_idx)], boxes,
          level_stride(pipe.model.mask_level), pipe.model);
      if (pooled.kept.empty()) break;

      MaskTensor masks = predict_masks(pooled.pooled, pipe.params, pipe.model);
      // TICAM classes for this frame's kept proposals.
      std::vector<int> ticlasses;
      for (int kept : pooled.kept) {
        int cls = 0;
        if (pipe.model.class_aware) {
          int row = -1, seen = 0;
          for (size_t r = 0; r < bank.origin.size(); ++r) {
            if (bank.origin[r].first == set.frame_index && bank.origin[r].second == kept) {
              row = static_cast<int>(r);
              break;
            }
          }
          (void)seen;
          const float* logits = aggf.class_logits.data() +
                                static_cast<int64_t>(row) * pipe.model.num_classes;
          for (int c = 1; c < pipe.model.num_classes; ++c) {
            if (logits[c] > logits[cls]) cls = c;
          }
        }
        ticlasses.push_back(cls);
      }
      FilteredMasks filtered = filter_by_class(masks, ticlasses);
      std::vector<Box> kept_boxes;
      for (int kept : pooled.kept) kept_boxes.push_back(set.boxes[static_cast<size_t>(kept)]);
      std::vector<BinaryMask> gt_masks;
      std::vector<Box> gt_boxes;
      for (const Annotation& a : fr.pseudo) gt_masks.push_back(a.mask);
      for (const Annotation& a : fr.objects) gt_boxes.push_back(a.box);
      std::vector<MaskPair> pairs = match_targets(filtered, kept_boxes, gt_masks, gt_boxes,
                                                  fr.image.dim(1), fr.image.dim(2));
      l_mask = mask_loss(pairs, pipe.model.mask_loss_kind);
      break;
    }
  }

  Tensor total = add(l_det, scale(l_mask, tc.lambda));
  check_loss_finite(total.scalar64());
  total.backward();
  opt.step(pipe.params, trainable_names(pipe.params, TrainPhase::Finetune, tc.freeze_base), lr);
  return total_loss(l_det.scalar64(), l_mask.scalar64(), tc.lambda);
}

namespace {

int find_latest_checkpoint(const std::string& out_dir) {
  int latest = -1;
  if (!fs::exists(out_dir)) return latest;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ck_", 0) == 0) {
      latest = std::max(latest, std::atoi(name.c_str() + 3));
    }
  }
  return latest;
}

std::string checkpoint_name(const std::string& out_dir, int iter) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ck_%06d", iter);
  return (fs::path(out_dir) / buf).string();
}

}  // namespace

FitResult fit(Pipeline& pipe, const Dataset& ds, TrainPhase phase, const TrainConfig& tc,
              const RuntimeConfig& rt, const std::string& out_dir) {
  const std::vector<int> train_idx = ds.split_indices("train");
  if (train_idx.empty()) throw std::runtime_error("fit: dataset has no train clips");

  SgdOptimizer opt;
  int start = 0;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const int latest = find_latest_checkpoint(out_dir);
    if (latest >= 0) {
      Checkpoint ck = load_checkpoint(checkpoint_name(out_dir, latest));
      for (const std::string& name : ck.params.names()) {
        Tensor& dst = pipe.params.get(name);
        const Tensor& src = ck.params.get(name);
        std::copy(src.data(), src.data() + src.numel(), dst.data());
      }
      opt.state() = ck.momentum;
      start = latest;
    }
  }

  std::string csv;
  std::ofstream log;
  if (!out_dir.empty()) log.open((fs::path(out_dir) / "metrics.csv").string(), std::ios::app);

  for (int it = start; it < tc.total_iters; ++it) {
    const double lr = cosine_lr(it, tc);
    Rng rng(mix_seed(tc.seed, 0x17E7A11ull + static_cast<uint64_t>(it)));
    LossBreakdown loss;
    if (phase == TrainPhase::Pretrain) {
      std::vector<const DatasetFrame*> frames;
      for (int b = 0; b < tc.batch_clips; ++b) {
        const DatasetClip& clip =
            ds.clips[static_cast<size_t>(train_idx[rng.next_int(static_cast<int>(train_idx.size()))])];
        frames.push_back(&clip.frames[static_cast<size_t>(rng.next_int(
            static_cast<int>(clip.frames.size())))]);
      }
      loss = pretrain_step(pipe, frames, opt, lr, tc);
    } else {
      const DatasetClip& clip =
          ds.clips[static_cast<size_t>(train_idx[rng.next_int(static_cast<int>(train_idx.size()))])];
      // m distinct frames, ascending (partial Fisher-Yates).
      std::vector<int> ids(clip.frames.size());
      for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
      const int m = std::min<int>(tc.m, static_cast<int>(ids.size()));
      for (int i = 0; i < m; ++i) {
        const int j = i + rng.next_int(static_cast<int>(ids.size()) - i);
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
      }
      ids.resize(static_cast<size_t>(m));
      std::sort(ids.begin(), ids.end());
      loss = finetune_step(pipe, clip, ids, rt, opt, lr, tc);
    }
    char line[160];
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g\n", it, lr, loss.l_det, loss.l_mask,
                  loss.l_total);
    csv += line;
    if (log.is_open()) log << line << std::flush;

    const int done = it + 1;
    if (!out_dir.empty() &&
        (done == tc.total_iters || (tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0))) {
      save_checkpoint(checkpoint_name(out_dir, done), pipe.params, opt.state());
    }
  }
  return FitResult{csv, start};
}

}  // namespace faim
