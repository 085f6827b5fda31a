#pragma once

#include <map>
#include <string>
#include <vector>

#include "faim/dataset.hpp"
#include "faim/pipeline.hpp"

namespace faim {

struct TrainConfig {
  double base_lr = 0.05;
  double min_lr = 0.0005;
  int warmup_iters = 100;
  int total_iters = 1000;
  int batch_clips = 1;
  int m = 16;  // frames sampled per clip per step
  double lambda = 1.0;
  bool freeze_base = true;
  uint64_t seed = 0;
  int checkpoint_every = 500;
  int mask_train_cap = 8;  // proposals fed to the mask branch per step
};

// Linear warm-up to base_lr, then cosine decay to min_lr at total_iters.
double cosine_lr(int it, const TrainConfig& cfg);

enum class TrainPhase { Pretrain = 0, Finetune = 1 };

// Pretrain updates the base detector (backbone/neck/heads); finetune updates
// only the added modules unless freeze_base is false.
std::vector<std::string> trainable_names(const Parameters& p, TrainPhase phase, bool freeze_base);

// Warm start for fine-tuning: the video object branch towers copy the
// pretrained classification tower and the 1x1 split heads start at identity,
// so TICAM sees discriminative features from the first step.
void init_video_branch_from_head(Parameters& p);

class SgdOptimizer {
public:
  explicit SgdOptimizer(double momentum = 0.9) : momentum_(momentum) {}
  void step(Parameters& params, const std::vector<std::string>& names, double lr);
  std::map<std::string, std::vector<float>>& state() { return velocity_; }
  const std::map<std::string, std::vector<float>>& state() const { return velocity_; }

private:
  double momentum_;
  std::map<std::string, std::vector<float>> velocity_;
};

// Single-frame detection loss step.
LossBreakdown pretrain_step(Pipeline& pipe, const std::vector<const DatasetFrame*>& frames,
                            SgdOptimizer& opt, double lr, const TrainConfig& tc);

// End-to-end FAIM step on m sampled frames of one clip: detector -> FPSM ->
// (IFEM) -> TICAM classification loss, plus the mask branch against pseudo
// masks when aggregation == MaskFeatures. During fine-tuning l_det is the
// aggregated-classification loss; with a frozen base the YOLOX-style
// detection loss carries no gradient. Aborts on a non-finite loss.
LossBreakdown finetune_step(Pipeline& pipe, const DatasetClip& clip,
                            const std::vector<int>& frame_ids, const RuntimeConfig& rt,
                            SgdOptimizer& opt, double lr, const TrainConfig& tc);

struct FitResult {
  std::string metrics_csv;  // "iter,lr,l_det,l_mask,l_total" lines for this run
  int start_iter = 0;       // first iteration executed (resume-aware)
};

// Training loop: per-iteration deterministic sampling from (seed, iter),
// CSV metrics, periodic checkpoints under out_dir (empty -> no artifacts),
// resumable from the latest checkpoint found there.
FitResult fit(Pipeline& pipe, const Dataset& ds, TrainPhase phase, const TrainConfig& tc,
              const RuntimeConfig& rt, const std::string& out_dir);

}  // namespace faim
