#include "faim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <mutex>
#include <ostream>
#include <thread>

#include "faim/train.hpp"

namespace faim {

namespace {

// Globally unique keys for frames and tracks across clips.
int frame_key(int clip, int frame) { return clip * 4096 + frame; }
int track_key(int clip, int track) { return clip * 4096 + track; }

int target_level_for(const Box& b) {
  const float size = std::sqrt(b.area());
  return size < 24.0f ? 0 : size < 48.0f ? 1 : 2;
}

}  // namespace

EvalReport evaluate_dataset(const Pipeline& pipe, const Dataset& ds, const RuntimeConfig& rt,
                            const std::string& split, bool with_buckets, int threads) {
  const std::vector<int> idx = ds.split_indices(split);
  if (idx.empty()) throw std::runtime_error("evaluate_dataset: empty split '" + split + "'");

  std::vector<std::vector<Detection>> per_clip(idx.size());
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(idx.size())));
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    try {
      for (size_t i = next.fetch_add(1); i < idx.size(); i = next.fetch_add(1)) {
        const DatasetClip& clip = ds.clips[static_cast<size_t>(idx[i])];
        std::vector<Tensor> frames;
        for (const DatasetFrame& fr : clip.frames) frames.push_back(fr.image);
        std::vector<FinalDetection> dets = infer_clip(pipe, frames, rt);
        for (const FinalDetection& d : dets) {
          per_clip[i].push_back(
              Detection{frame_key(idx[i], d.frame_index), d.box, d.class_id, d.score});
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(idx.size());
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  std::vector<Detection> dets;
  for (const auto& v : per_clip) dets.insert(dets.end(), v.begin(), v.end());

  std::vector<GtBox> gts;
  std::map<int, MotionSpeed> buckets;
  for (int ci : idx) {
    const DatasetClip& clip = ds.clips[static_cast<size_t>(ci)];
    std::map<int, std::vector<float>> track_ious;
    for (size_t t = 0; t < clip.frames.size(); ++t) {
      for (const Annotation& a : clip.frames[t].objects) {
        gts.push_back(GtBox{frame_key(ci, static_cast<int>(t)), a.box, a.class_id,
                            track_key(ci, a.track_id)});
        if (t + 1 < clip.frames.size()) {
          for (const Annotation& b : clip.frames[t + 1].objects) {
            if (b.track_id == a.track_id) track_ious[a.track_id].push_back(iou(a.box, b.box));
          }
        }
      }
    }
    for (const auto& [track, seq] : track_ious) {
      buckets[track_key(ci, track)] = motion_speed_of(seq);
    }
    // Tracks visible in a single frame have no IoU sequence; bucket them by
    // the clip's generation band.
    for (size_t t = 0; t < clip.frames.size(); ++t) {
      for (const Annotation& a : clip.frames[t].objects) {
        buckets.emplace(track_key(ci, a.track_id), clip.speed);
      }
    }
  }

  EvalReport report = map_at(dets, gts, static_cast<int>(ds.classes.size()));
  if (with_buckets) {
    auto bm = bucket_map(dets, gts, buckets, static_cast<int>(ds.classes.size()));
    for (const auto& [bucket, v] : bm) report.bucket_map50[motion_speed_name(bucket)] = v;
  }
  return report;
}

void copy_params_by_prefix(Parameters& dst, const Parameters& src,
                           const std::vector<std::string>& prefixes) {
  for (const std::string& name : src.names()) {
    bool take = false;
    for (const std::string& pre : prefixes) take = take || name.rfind(pre, 0) == 0;
    if (!take || !dst.has(name)) continue;
    Tensor& d = dst.get(name);
    const Tensor& s = src.get(name);
    if (d.shape() != s.shape()) {
      throw std::runtime_error("copy_params_by_prefix: shape mismatch for " + name);
    }
    std::copy(s.data(), s.data() + s.numel(), d.data());
  }
}

PooledVariance occlusion_variance(const Pipeline& pipe, const Dataset& ds) {
  std::map<int, std::vector<std::vector<float>>> by_class_box, by_class_mask;
  std::vector<int> idx = ds.split_indices("val");
  for (int ci : idx) {
    const DatasetClip& clip = ds.clips[static_cast<size_t>(ci)];
    if (!clip.has_occlusion) continue;
    for (const DatasetFrame& fr : clip.frames) {
      if (fr.objects.empty()) continue;
      FrameContext ctx = forward_frame(pipe, fr.image, false, false);
      for (const Annotation& a : fr.objects) {
        const int level = target_level_for(a.box);
        const FeatureMap& neck = ctx.det.levels[static_cast<size_t>(level)].neck;
        const float stride = static_cast<float>(neck.stride);
        const int c = neck.tensor.dim(0), fh = neck.tensor.dim(1), fw = neck.tensor.dim(2);

        Box scaled{a.box.x1 / stride, a.box.y1 / stride, a.box.x2 / stride, a.box.y2 / stride};
        Tensor pooled = roi_align(neck.tensor, scaled, 1, 1, 4);
        by_class_box[a.class_id].emplace_back(pooled.data(), pooled.data() + c);

        std::vector<double> acc(static_cast<size_t>(c), 0.0);
        int64_t count = 0;
        for (int y = 0; y < a.mask.height; ++y) {
          for (int x = 0; x < a.mask.width; ++x) {
            if (!a.mask.at(y, x)) continue;
            const int cy = std::min(fh - 1, static_cast<int>(y / stride));
            const int cx = std::min(fw - 1, static_cast<int>(x / stride));
            for (int ch = 0; ch < c; ++ch) {
              acc[static_cast<size_t>(ch)] +=
                  neck.tensor.data()[(static_cast<int64_t>(ch) * fh + cy) * fw + cx];
            }
            ++count;
          }
        }
        std::vector<float> mask_feat(static_cast<size_t>(c));
        for (int ch = 0; ch < c; ++ch) {
          mask_feat[static_cast<size_t>(ch)] =
              static_cast<float>(acc[static_cast<size_t>(ch)] / static_cast<double>(count));
        }
        by_class_mask[a.class_id].push_back(std::move(mask_feat));
      }
    }
  }
  // Drop classes with fewer than two samples (the report op rejects them).
  for (auto it = by_class_box.begin(); it != by_class_box.end();) {
    if (it->second.size() < 2) {
      by_class_mask.erase(it->first);
      it = by_class_box.erase(it);
    } else {
      ++it;
    }
  }
  PooledVariance out;
  out.box = feature_variance_report(by_class_box);
  out.mask = feature_variance_report(by_class_mask);
  return out;
}

namespace {

SeedOutcome run_one_seed(const RunConfig& base, const Dataset& ds, int pretrain_iters,
                         int finetune_iters, uint64_t seed, std::ostream* progress,
                         std::mutex* log_mutex) {
  auto log = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard<std::mutex> lock(*log_mutex);
    (*progress) << "[seed " << seed << "] " << msg << "\n" << std::flush;
  };

  RunConfig cfg = base;
  cfg.seed = seed;

  // Pretrain the base detector once per seed.
  RunConfig pre_cfg = cfg;
  pre_cfg.aggregation = "mask";
  Pipeline pretrained = build_pipeline(pre_cfg.model_config(), seed);
  TrainConfig ptc = pre_cfg.train_config(pretrain_iters);
  ptc.m = pre_cfg.m_train;
  fit(pretrained, ds, TrainPhase::Pretrain, ptc, pre_cfg.runtime_config(), "");
  log("pretrain done (" + std::to_string(pretrain_iters) + " iters)");

  const std::vector<std::string> base_prefixes{"backbone.", "neck.", "head."};
  SeedOutcome outcome;
  outcome.seed = seed;

  for (const std::string& mode : {std::string("none"), std::string("box"), std::string("mask")}) {
    RunConfig mc = cfg;
    mc.aggregation = mode;
    Pipeline pipe = build_pipeline(mc.model_config(), seed);
    copy_params_by_prefix(pipe.params, pretrained.params, base_prefixes);
    if (mode != "none") {
      init_video_branch_from_head(pipe.params);
      TrainConfig ftc = mc.train_config(finetune_iters);
      ftc.base_lr = mc.finetune_lr;
      fit(pipe, ds, TrainPhase::Finetune, ftc, mc.runtime_config(), "");
      log("finetune(" + mode + ") done");
    }
    EvalReport report = evaluate_dataset(pipe, ds, mc.runtime_config(), "val", false, 1);
    outcome.map50[mode] = report.map50;
    log("eval(" + mode + ") mAP50 = " + std::to_string(report.map50));
  }

  Pipeline var_pipe = build_pipeline(cfg.model_config(), seed);
  copy_params_by_prefix(var_pipe.params, pretrained.params, base_prefixes);
  PooledVariance pv = occlusion_variance(var_pipe, ds);
  outcome.var_ratio_box = pv.box.ratio;
  outcome.var_ratio_mask = pv.mask.ratio;
  outcome.variance_holds = pv.mask.ratio < pv.box.ratio;
  outcome.order_holds = outcome.map50["mask"] >= outcome.map50["box"] &&
                        outcome.map50["box"] >= outcome.map50["none"];
  log("variance ratio box=" + std::to_string(pv.box.ratio) +
      " mask=" + std::to_string(pv.mask.ratio));
  return outcome;
}

}  // namespace

DeskAblationResult run_desk_ablation(const RunConfig& base, const Dataset& ds, int pretrain_iters,
                                     int finetune_iters, const std::vector<uint64_t>& seeds,
                                     std::ostream* progress) {
  DeskAblationResult result;
  result.seeds.resize(seeds.size());
  std::mutex log_mutex;

  unsigned hw = std::thread::hardware_concurrency();
  int workers = std::max(1, std::min<int>(static_cast<int>(hw), static_cast<int>(seeds.size())));
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    try {
      for (size_t i = next.fetch_add(1); i < seeds.size(); i = next.fetch_add(1)) {
        result.seeds[i] = run_one_seed(base, ds, pretrain_iters, finetune_iters, seeds[i],
                                       progress, &log_mutex);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(seeds.size());
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  double gain = 0;
  for (const SeedOutcome& s : result.seeds) {
    result.order_holds += s.order_holds ? 1 : 0;
    result.variance_holds += s.variance_holds ? 1 : 0;
    gain += 100.0 * (s.map50.at("mask") - s.map50.at("none"));
  }
  result.mean_gain_points = gain / static_cast<double>(result.seeds.size());
  return result;
}

std::vector<std::pair<std::string, double>> run_axis_ablation(const RunConfig& base,
                                                              const Dataset& ds,
                                                              const std::string& axis,
                                                              int pretrain_iters,
                                                              int finetune_iters,
                                                              std::ostream* progress) {
  std::vector<std::pair<std::string, std::string>> values;  // (key, value)
  if (axis == "aggregation") {
    values = {{"aggregation", "none"}, {"aggregation", "box"}, {"aggregation", "mask"}};
  } else if (axis == "loss") {
    values = {{"loss", "bce"}, {"loss", "dice"}};
  } else if (axis == "class_aware") {
    values = {{"class_aware", "true"}, {"class_aware", "false"}};
  } else if (axis == "roi_size") {
    values = {{"roi_size", "14"}, {"roi_size", "28"}, {"roi_size", "32"}};
  } else if (axis == "fpn_level") {
    values = {{"fpn_level", "P3"}, {"fpn_level", "P4"}, {"fpn_level", "P5"}};
  } else if (axis == "n_cap") {
    values = {{"n_cap", "10"}, {"n_cap", "20"}, {"n_cap", "30"}};
  } else if (axis == "m") {
    values = {{"m_train", "2"}, {"m_train", "4"}, {"m_train", "8"}};
  } else {
    throw ConfigError("ablate: unknown axis '" + axis + "'");
  }

  // One shared pretrain; each value fine-tunes fresh new modules from it.
  RunConfig pre_cfg = base;
  pre_cfg.aggregation = "mask";
  Pipeline pretrained = build_pipeline(pre_cfg.model_config(), base.seed);
  fit(pretrained, ds, TrainPhase::Pretrain, pre_cfg.train_config(pretrain_iters),
      pre_cfg.runtime_config(), "");
  if (progress) (*progress) << "[ablate " << axis << "] pretrain done\n" << std::flush;

  std::vector<std::pair<std::string, double>> rows;
  for (const auto& [key, value] : values) {
    RunConfig cfg = base;
    cfg.set(key, value);
    Pipeline pipe = build_pipeline(cfg.model_config(), base.seed);
    copy_params_by_prefix(pipe.params, pretrained.params, {"backbone.", "neck.", "head."});
    if (!(key == "aggregation" && value == "none")) {
      init_video_branch_from_head(pipe.params);
      TrainConfig ftc = cfg.train_config(finetune_iters);
      ftc.base_lr = cfg.finetune_lr;
      fit(pipe, ds, TrainPhase::Finetune, ftc, cfg.runtime_config(), "");
    }
    EvalReport report = evaluate_dataset(pipe, ds, cfg.runtime_config(), "val", false);
    rows.emplace_back(key + "=" + value, report.map50);
    if (progress) {
      (*progress) << "[ablate " << axis << "] " << key << "=" << value
                  << " mAP50=" << report.map50 << "\n"
                  << std::flush;
    }
  }
  return rows;
}

}  // namespace faim
