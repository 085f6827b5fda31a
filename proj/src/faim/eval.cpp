#include "faim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace faim {

namespace {

struct ClassMatch {
  std::vector<int> order;       // det indices, score-descending
  std::vector<int> matched_gt;  // per ranked det: gt index or -1
  int num_gt = 0;
};

ClassMatch match_class(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                       double iou_thr) {
  ClassMatch out;
  out.num_gt = static_cast<int>(gts.size());
  out.order.resize(dets.size());
  std::iota(out.order.begin(), out.order.end(), 0);
  std::sort(out.order.begin(), out.order.end(), [&dets](int a, int b) {
    if (dets[static_cast<size_t>(a)].score != dets[static_cast<size_t>(b)].score) {
      return dets[static_cast<size_t>(a)].score > dets[static_cast<size_t>(b)].score;
    }
    return a < b;
  });
  std::vector<char> used(gts.size(), 0);
  out.matched_gt.assign(dets.size(), -1);
  for (size_t rank = 0; rank < out.order.size(); ++rank) {
    const Detection& det = dets[static_cast<size_t>(out.order[rank])];
    double best = -1.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].frame_id != det.frame_id || !det.box.valid()) continue;
      const double v = iou(det.box, gts[g].box);
      // strict > keeps the lower gt index on ties
      if (v >= iou_thr && v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      used[static_cast<size_t>(best_gt)] = 1;
      out.matched_gt[rank] = best_gt;
    }
  }
  return out;
}

// All-point interpolation over a ranked TP/FP sequence.
double ap_from_labels(const std::vector<char>& is_tp, int num_gt) {
  if (num_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (char label : is_tp) {
    if (label) {
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  double ap = 0.0, prev_recall = 0.0, pmax = 0.0;
  std::vector<double> envelope(precision.size());
  for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
    pmax = std::max(pmax, precision[static_cast<size_t>(i)]);
    envelope[static_cast<size_t>(i)] = pmax;
  }
  for (size_t i = 0; i < precision.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

}  // namespace

double average_precision(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                         double iou_thr) {
  if (!(iou_thr > 0.0 && iou_thr < 1.0)) {
    throw std::invalid_argument("average_precision: iou_thr must be in (0,1)");
  }
  if (gts.empty()) return 0.0;
  const ClassMatch match = match_class(dets, gts, iou_thr);
  std::vector<char> labels;
  labels.reserve(match.order.size());
  for (size_t rank = 0; rank < match.order.size(); ++rank) {
    labels.push_back(match.matched_gt[rank] >= 0 ? 1 : 0);
  }
  return ap_from_labels(labels, match.num_gt);
}

EvalReport map_at(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                  int num_classes) {
  if (gts.empty()) throw std::invalid_argument("map_at: no ground truth in any class");
  EvalReport report;
  report.num_detections = static_cast<int>(dets.size());
  report.num_gts = static_cast<int>(gts.size());

  std::vector<int> thresholds{500, 550, 600, 650, 700, 750, 800, 850, 900, 950};
  std::vector<std::vector<Detection>> dets_by_class(static_cast<size_t>(num_classes));
  std::vector<std::vector<GtBox>> gts_by_class(static_cast<size_t>(num_classes));
  for (const Detection& d : dets) {
    if (d.class_id >= 0 && d.class_id < num_classes) {
      dets_by_class[static_cast<size_t>(d.class_id)].push_back(d);
    }
  }
  for (const GtBox& g : gts) gts_by_class[static_cast<size_t>(g.class_id)].push_back(g);

  double sum50 = 0, sum75 = 0, sum_all = 0;
  int classes_with_gt = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (gts_by_class[static_cast<size_t>(c)].empty()) continue;
    ++classes_with_gt;
    double class_sum = 0;
    for (int thr : thresholds) {
      const double ap = average_precision(dets_by_class[static_cast<size_t>(c)],
                                          gts_by_class[static_cast<size_t>(c)], thr / 1000.0);
      report.ap[c][thr] = ap;
      class_sum += ap;
      if (thr == 500) sum50 += ap;
      if (thr == 750) sum75 += ap;
    }
    sum_all += class_sum / static_cast<double>(thresholds.size());
  }
  report.classes_evaluated = classes_with_gt;
  report.map50 = sum50 / classes_with_gt;
  report.map75 = sum75 / classes_with_gt;
  report.map50_95 = sum_all / classes_with_gt;
  return report;
}

std::map<MotionSpeed, double> bucket_map(const std::vector<Detection>& dets,
                                         const std::vector<GtBox>& gts,
                                         const std::map<int, MotionSpeed>& track_buckets,
                                         int num_classes) {
  auto bucket_of = [&track_buckets](const GtBox& g) {
    auto it = track_buckets.find(g.track_id);
    if (it == track_buckets.end()) {
      throw std::invalid_argument("bucket_map: GT track without a bucket");
    }
    return it->second;
  };

  std::map<MotionSpeed, double> sums;
  std::map<MotionSpeed, int> class_counts;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<Detection> cd;
    std::vector<GtBox> cg;
    for (const Detection& d : dets)
      if (d.class_id == c) cd.push_back(d);
    for (const GtBox& g : gts)
      if (g.class_id == c) cg.push_back(g);
    if (cg.empty()) continue;
    const ClassMatch match = match_class(cd, cg, 0.5);
    for (MotionSpeed bucket : {MotionSpeed::Slow, MotionSpeed::Medium, MotionSpeed::Fast}) {
      int bucket_gt = 0;
      for (const GtBox& g : cg)
        if (bucket_of(g) == bucket) ++bucket_gt;
      if (bucket_gt == 0) continue;
      std::vector<char> labels;
      for (size_t rank = 0; rank < match.order.size(); ++rank) {
        const int mg = match.matched_gt[rank];
        if (mg < 0) {
          labels.push_back(0);  // unmatched FPs hit every bucket
        } else if (bucket_of(cg[static_cast<size_t>(mg)]) == bucket) {
          labels.push_back(1);
        }  // matched outside the bucket: ignored
      }
      sums[bucket] += ap_from_labels(labels, bucket_gt);
      class_counts[bucket] += 1;
    }
  }
  std::map<MotionSpeed, double> out;
  for (const auto& [bucket, total] : sums) out[bucket] = total / class_counts[bucket];
  return out;
}

VarianceReport feature_variance_report(
    const std::map<int, std::vector<std::vector<float>>>& features_by_class) {
  if (features_by_class.size() < 2) {
    throw std::invalid_argument("feature_variance_report: need >= 2 classes");
  }
  size_t dim = 0;
  for (const auto& [cls, feats] : features_by_class) {
    if (feats.size() < 2) {
      throw std::invalid_argument("feature_variance_report: singleton class " +
                                  std::to_string(cls));
    }
    dim = feats[0].size();
  }
  std::vector<std::vector<double>> centroids;
  double intra = 0;
  int64_t samples = 0;
  for (const auto& [cls, feats] : features_by_class) {
    std::vector<double> c(dim, 0.0);
    for (const auto& f : feats)
      for (size_t i = 0; i < dim; ++i) c[i] += f[i];
    for (double& v : c) v /= static_cast<double>(feats.size());
    for (const auto& f : feats) {
      double d2 = 0;
      for (size_t i = 0; i < dim; ++i) {
        const double d = f[i] - c[i];
        d2 += d * d;
      }
      intra += d2;
      ++samples;
    }
    centroids.push_back(std::move(c));
  }
  intra /= static_cast<double>(samples);
  double inter = 0;
  int64_t pairs = 0;
  for (size_t a = 0; a < centroids.size(); ++a)
    for (size_t b = a + 1; b < centroids.size(); ++b) {
      double d2 = 0;
      for (size_t i = 0; i < dim; ++i) {
        const double d = centroids[a][i] - centroids[b][i];
        d2 += d * d;
      }
      inter += d2;
      ++pairs;
    }
  inter /= static_cast<double>(pairs);
  VarianceReport rep;
  rep.intra = intra;
  rep.inter = inter;
  rep.ratio = inter > 0 ? intra / inter : 0.0;
  return rep;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["map50"] = report.map50;
  j["map75"] = report.map75;
  j["map50_95"] = report.map50_95;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (const auto& [cls, thr_map] : report.ap) {
    nlohmann::ordered_json tj = nlohmann::ordered_json::object();
    for (const auto& [thr, ap] : thr_map) {
      char key[8];
      std::snprintf(key, sizeof(key), "0.%02d", thr / 10);
      tj[key] = ap;
    }
    per_class[std::to_string(cls)] = tj;
  }
  j["ap_per_class"] = per_class;
  if (!report.bucket_map50.empty()) {
    nlohmann::ordered_json bj = nlohmann::ordered_json::object();
    for (const auto& [name, v] : report.bucket_map50) bj[name] = v;
    j["bucket_map50"] = bj;
  }
  j["num_detections"] = report.num_detections;
  j["num_gts"] = report.num_gts;
  j["classes_evaluated"] = report.classes_evaluated;
  return j.dump(2);
}

}  // namespace faim
