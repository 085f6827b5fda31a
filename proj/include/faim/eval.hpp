#pragma once

#include <map>
#include <string>
#include <vector>

#include "faim/geometry.hpp"
#include "faim/synthdata.hpp"

namespace faim {

struct Detection {
  int frame_id = 0;  // globally unique frame key
  Box box;
  int class_id = 0;
  float score = 0;
};

struct GtBox {
  int frame_id = 0;
  Box box;
  int class_id = 0;
  int track_id = -1;  // global track key for motion buckets, -1 when unused
};

// All-point interpolated average precision for a single class: detections are
// matched greedily in score order (ties by insertion index) to the best-IoU
// unmatched GT of the same frame at iou_thr; each GT matches at most once.
double average_precision(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                         double iou_thr);

struct EvalReport {
  // ap[class][threshold in permille, e.g. 500 for 0.50]
  std::map<int, std::map<int, double>> ap;
  double map50 = 0, map75 = 0, map50_95 = 0;
  std::map<std::string, double> bucket_map50;  // empty unless buckets computed
  int num_detections = 0, num_gts = 0, classes_evaluated = 0;
};

// Per-class AP at {0.50, 0.75} and 0.50:0.05:0.95, unweighted class means;
// classes without GT are excluded. Throws when no GT exists at all.
EvalReport map_at(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                  int num_classes);

// Motion-speed bucketed mAP50. GTs are partitioned by their track's bucket;
// a detection matched to a GT counts in that GT's bucket, unmatched
// detections count as false positives in every bucket, and detections
// matched outside the bucket are ignored for it.
std::map<MotionSpeed, double> bucket_map(const std::vector<Detection>& dets,
                                         const std::vector<GtBox>& gts,
                                         const std::map<int, MotionSpeed>& track_buckets,
                                         int num_classes);

struct VarianceReport {
  double intra = 0, inter = 0, ratio = 0;
};

// intra: mean squared distance to the class centroid; inter: mean squared
// pairwise centroid distance; ratio = intra / inter. Requires >= 2 classes
// and >= 2 samples per class.
VarianceReport feature_variance_report(
    const std::map<int, std::vector<std::vector<float>>>& features_by_class);

// ---- benchmark harness ----

struct BenchRow {
  int size = 0;
  uint64_t flops = 0;
  double median_ms = 0;
};

// Stages: "conv" (map size), "attention" (bank rows), "roi_align" (output
// size), "detector" (image size), "inference" (proposal cap on a fixed clip).
std::vector<BenchRow> run_benchmark(const std::string& stage, const std::vector<int>& sizes,
                                    int repeats, int warmup);

std::string benchmark_csv(const std::vector<BenchRow>& rows);

// report.json serialization (stable field order).
std::string eval_report_json(const EvalReport& report);

}  // namespace faim
