#pragma once

#include <cstdint>
#include <vector>

#include "faim/geometry.hpp"
#include "faim/model.hpp"
#include "faim/params.hpp"

namespace faim {

// Per-class mask logits for N proposals. Construction is counted so the
// inference path can be audited to never build one.
struct MaskTensor {
  Tensor logits;  // [N, C, Hm, Wm], Hm = Wm = 2 * roi_size

  explicit MaskTensor(Tensor t);
  static int64_t constructed_count();
};

struct FilteredMasks {
  std::vector<Tensor> masks;  // each [Hm, Wm]
  std::vector<int> classes;   // t_i
};

struct LossBreakdown {
  double l_det = 0, l_mask = 0, l_total = 0, lambda = 1.0;
};

struct PooledFeatures {
  Tensor pooled;          // [N, C', r, r] for the kept boxes
  std::vector<int> kept;  // indices into the input box list
  int skipped = 0;        // boxes degenerate after scaling to feature coords
};

// A matched (prediction, target) pair: the predicted mask resized into the
// matched GT box frame, and the GT mask cropped to that box.
struct MaskPair {
  Tensor pred;  // [h, w] logits
  BinaryMask target;
};

void add_maskhead_params(Parameters& p, const ModelConfig& cfg);

// RoIAlign of every box (image coordinates, divided by image_stride) on the
// instance feature map of the configured level.
PooledFeatures pool_instance_features(const Tensor& f_ins, const std::vector<Box>& boxes,
                                      int image_stride, const ModelConfig& cfg);

// Four 3x3 conv+ReLU layers, bilinear x2 upsample, then 1x1 conv to the
// class channels. Logits only; no sigmoid.
MaskTensor predict_masks(const Tensor& pooled, const Parameters& p, const ModelConfig& cfg);

// m_i' = M[i, t_i, :, :]
FilteredMasks filter_by_class(const MaskTensor& masks, const std::vector<int>& ticam_classes);

// Matches each filtered prediction to a GT by mask IoU after resizing the
// prediction into each GT box frame (binarized at probability 0.5); falls
// back to best box IoU when every mask overlap is zero.
std::vector<MaskPair> match_targets(const FilteredMasks& filtered, const std::vector<Box>& boxes,
                                    const std::vector<BinaryMask>& gt_masks,
                                    const std::vector<Box>& gt_boxes, int image_h, int image_w);

// (1/N') sum of per-pair pixel-mean BCE (probabilities clamped to
// [1e-7, 1-1e-7]); zero when no pairs. Dice variant behind the config flag.
Tensor mask_loss(const std::vector<MaskPair>& pairs, MaskLossKind kind = MaskLossKind::Bce);

// l_total = l_det + lambda * l_mask, all finite and non-negative.
LossBreakdown total_loss(double l_det, double l_mask, double lambda = 1.0);

}  // namespace faim
