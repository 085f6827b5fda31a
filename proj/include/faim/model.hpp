#pragma once

#include <array>
#include <string>

#include "faim/geometry.hpp"

namespace faim {

enum class Level { P3 = 0, P4 = 1, P5 = 2 };

inline int level_stride(Level l) {
  switch (l) {
    case Level::P3: return 8;
    case Level::P4: return 16;
    default: return 32;
  }
}

inline const char* level_name(Level l) {
  switch (l) {
    case Level::P3: return "P3";
    case Level::P4: return "P4";
    default: return "P5";
  }
}

enum class Aggregation { None = 0, BoxFeatures = 1, MaskFeatures = 2 };
enum class MaskLossKind { Bce = 0, Dice = 1 };
enum class ScoreMode { Replace = 0, Multiply = 1 };

// Structural hyper-parameters shared by the detector and the added modules.
struct ModelConfig {
  int num_classes = 8;
  int channels = 16;     // backbone/neck width C
  int c_prime = 0;       // IFEM output width C' (0 -> channels)
  int feature_dim = 64;  // TICAM query width D
  int heads = 4;
  int roi_size = 32;      // mask-branch RoIAlign output size
  int mask_channels = 0;  // FCN hidden width (0 -> C')
  bool class_aware = true;
  Level mask_level = Level::P5;
  int samples_per_bin = 2;
  Aggregation aggregation = Aggregation::MaskFeatures;
  MaskLossKind mask_loss_kind = MaskLossKind::Bce;
  ScoreMode score_mode = ScoreMode::Replace;

  int resolved_c_prime() const { return c_prime > 0 ? c_prime : channels; }
  int resolved_mask_channels() const {
    return mask_channels > 0 ? mask_channels : resolved_c_prime();
  }
  int mask_out_channels() const { return class_aware ? num_classes : 1; }
  // Width of the instance-side TICAM query before linear projection.
  int ins_query_dim() const {
    return aggregation == Aggregation::BoxFeatures ? channels : resolved_c_prime();
  }
};

struct GtObject {
  Box box;
  int class_id = 0;
};

}  // namespace faim
