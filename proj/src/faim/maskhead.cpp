#include "faim/maskhead.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "faim/ops.hpp"

namespace faim {

namespace {
std::atomic<int64_t> g_mask_tensor_constructions{0};

struct CropRect {
  int x1, y1, x2, y2;  // integer half-open pixel rect, never empty
};

CropRect crop_rect(const Box& b, int image_h, int image_w) {
  int x1 = std::clamp(static_cast<int>(std::floor(b.x1)), 0, image_w - 1);
  int y1 = std::clamp(static_cast<int>(std::floor(b.y1)), 0, image_h - 1);
  int x2 = std::clamp(static_cast<int>(std::ceil(b.x2)), x1 + 1, image_w);
  int y2 = std::clamp(static_cast<int>(std::ceil(b.y2)), y1 + 1, image_h);
  return {x1, y1, x2, y2};
}

BinaryMask crop_mask(const BinaryMask& m, const CropRect& r) {
  BinaryMask out(r.y2 - r.y1, r.x2 - r.x1);
  for (int y = r.y1; y < r.y2; ++y)
    for (int x = r.x1; x < r.x2; ++x) out.set(y - r.y1, x - r.x1, m.at(y, x) != 0);
  return out;
}
}  // namespace

MaskTensor::MaskTensor(Tensor t) : logits(std::move(t)) {
  if (logits.rank() != 4) throw std::invalid_argument("MaskTensor: logits must be [N,C,H,W]");
  if (logits.dim(2) != logits.dim(3)) {
    throw std::invalid_argument("MaskTensor: mask grid must be square");
  }
  g_mask_tensor_constructions.fetch_add(1, std::memory_order_relaxed);
}

int64_t MaskTensor::constructed_count() {
  return g_mask_tensor_constructions.load(std::memory_order_relaxed);
}

void add_maskhead_params(Parameters& p, const ModelConfig& cfg) {
  const int cp = cfg.resolved_c_prime();
  const int mh = cfg.resolved_mask_channels();
  p.add_conv("mask.c1.w", mh, cp, 3, 3);
  p.add_zeros("mask.c1.b", {mh});
  for (int i = 2; i <= 4; ++i) {
    const std::string base = "mask.c" + std::to_string(i);
    p.add_conv(base + ".w", mh, mh, 3, 3);
    p.add_zeros(base + ".b", {mh});
  }
  p.add_conv("mask.out.w", cfg.mask_out_channels(), mh, 1, 1);
  p.add_zeros("mask.out.b", {cfg.mask_out_channels()});
}

PooledFeatures pool_instance_features(const Tensor& f_ins, const std::vector<Box>& boxes,
                                      int image_stride, const ModelConfig& cfg) {
  PooledFeatures out;
  std::vector<Tensor> pooled;
  const float s = static_cast<float>(image_stride);
  for (size_t i = 0; i < boxes.size(); ++i) {
    Box scaled{boxes[i].x1 / s, boxes[i].y1 / s, boxes[i].x2 / s, boxes[i].y2 / s};
    if (!scaled.valid()) {
      ++out.skipped;
      continue;
    }
    pooled.push_back(roi_align(f_ins, scaled, cfg.roi_size, cfg.roi_size, cfg.samples_per_bin));
    out.kept.push_back(static_cast<int>(i));
  }
  if (!pooled.empty()) out.pooled = stack_first(pooled);
  return out;
}

MaskTensor predict_masks(const Tensor& pooled, const Parameters& p, const ModelConfig& cfg) {
  if (pooled.rank() != 4) throw std::invalid_argument("predict_masks: pooled must be [N,C',r,r]");
  const int n = pooled.dim(0);
  const int r = pooled.dim(2);
  std::vector<Tensor> per_proposal;
  per_proposal.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Tensor x = slice_first(pooled, i);
    for (int li = 1; li <= 4; ++li) {
      const std::string base = "mask.c" + std::to_string(li);
      x = relu(conv2d(x, p.get(base + ".w"), p.get(base + ".b"), 1));
    }
    x = bilinear_resize(x, 2 * r, 2 * r);
    x = conv2d(x, p.get("mask.out.w"), p.get("mask.out.b"), 0);
    per_proposal.push_back(x);
  }
  return MaskTensor(stack_first(per_proposal));
}

FilteredMasks filter_by_class(const MaskTensor& masks, const std::vector<int>& ticam_classes) {
  const int n = masks.logits.dim(0);
  const int c = masks.logits.dim(1);
  if (static_cast<size_t>(n) != ticam_classes.size()) {
    throw std::invalid_argument("filter_by_class: class list length != N");
  }
  FilteredMasks out;
  for (int i = 0; i < n; ++i) {
    const int t = ticam_classes[static_cast<size_t>(i)];
    if (t < 0 || t >= c) throw std::invalid_argument("filter_by_class: class index out of range");
    out.masks.push_back(slice_channel(masks.logits, i, t));
    out.classes.push_back(t);
  }
  return out;
}

std::vector<MaskPair> match_targets(const FilteredMasks& filtered, const std::vector<Box>& boxes,
                                    const std::vector<BinaryMask>& gt_masks,
                                    const std::vector<Box>& gt_boxes, int image_h, int image_w) {
  if (filtered.masks.size() != boxes.size()) {
    throw std::invalid_argument("match_targets: predictions and boxes differ in length");
  }
  if (gt_masks.size() != gt_boxes.size()) {
    throw std::invalid_argument("match_targets: GT masks and boxes differ in length");
  }
  std::vector<MaskPair> pairs;
  if (gt_masks.empty()) return pairs;

  std::vector<CropRect> rects;
  std::vector<BinaryMask> crops;
  for (size_t g = 0; g < gt_masks.size(); ++g) {
    rects.push_back(crop_rect(gt_boxes[g], image_h, image_w));
    crops.push_back(crop_mask(gt_masks[g], rects.back()));
  }

  for (size_t i = 0; i < filtered.masks.size(); ++i) {
    const Tensor& logits = filtered.masks[i];
    // Resize the prediction into each candidate GT frame and pick the best
    // mask IoU (binarized at p=0.5, i.e. logit 0).
    int best = -1;
    double best_iou = 0.0;
    std::vector<Tensor> resized(gt_masks.size());
    for (size_t g = 0; g < gt_masks.size(); ++g) {
      const int h = rects[g].y2 - rects[g].y1;
      const int w = rects[g].x2 - rects[g].x1;
      Tensor rs = bilinear_resize(reshape(logits, {1, logits.dim(0), logits.dim(1)}), h, w);
      resized[g] = reshape(rs, {h, w});
      BinaryMask bin(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          bin.set(y, x, resized[g].data()[static_cast<int64_t>(y) * w + x] > 0.0f);
      const double mi = mask_iou(bin, crops[g]);
      if (mi > best_iou) {
        best_iou = mi;
        best = static_cast<int>(g);
      }
    }
    if (best < 0) {
      // No mask overlap anywhere; fall back to box IoU.
      double best_box = -1.0;
      for (size_t g = 0; g < gt_boxes.size(); ++g) {
        const double bi = boxes[i].valid() ? iou(boxes[i], gt_boxes[g]) : 0.0;
        if (bi > best_box) {
          best_box = bi;
          best = static_cast<int>(g);
        }
      }
    }
    pairs.push_back(MaskPair{resized[static_cast<size_t>(best)], crops[static_cast<size_t>(best)]});
  }
  return pairs;
}

Tensor mask_loss(const std::vector<MaskPair>& pairs, MaskLossKind kind) {
  if (pairs.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> per_pair;
  for (const MaskPair& pair : pairs) {
    if (pair.pred.dim(0) != pair.target.height || pair.pred.dim(1) != pair.target.width) {
      throw std::invalid_argument("mask_loss: pair shape mismatch");
    }
    std::vector<float> tgt(pair.target.bits.begin(), pair.target.bits.end());
    Tensor target = Tensor::from_data(pair.pred.shape(), std::move(tgt));
    per_pair.push_back(kind == MaskLossKind::Bce ? bce_with_logits_mean(pair.pred, target)
                                                 : dice_loss(pair.pred, target));
  }
  return scale(add_n(per_pair), 1.0 / static_cast<double>(per_pair.size()));
}

LossBreakdown total_loss(double l_det, double l_mask, double lambda) {
  if (!std::isfinite(l_det) || !std::isfinite(l_mask) || !std::isfinite(lambda)) {
    throw std::invalid_argument("total_loss: non-finite input");
  }
  if (l_det < 0 || l_mask < 0) throw std::invalid_argument("total_loss: negative loss");
  LossBreakdown out;
  out.l_det = l_det;
  out.l_mask = l_mask;
  out.lambda = lambda;
  out.l_total = l_det + lambda * l_mask;
  return out;
}

}  // namespace faim
