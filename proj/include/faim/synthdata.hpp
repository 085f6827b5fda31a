#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "faim/geometry.hpp"
#include "faim/tensor.hpp"

namespace faim {

struct Annotation {
  Box box;
  int class_id = 0;
  BinaryMask mask;
  int track_id = 0;
};

struct VideoClip {
  std::vector<Tensor> frames;                       // [3,H,W] each, values in [0,1]
  std::vector<std::vector<Annotation>> annotations;  // per frame
  uint64_t seed = 0;
  bool has_occlusion = false;
};

enum class MotionSpeed { Slow = 0, Medium = 1, Fast = 2 };

const char* motion_speed_name(MotionSpeed s);
MotionSpeed motion_speed_from_name(const std::string& name);

struct DegradationSpec {
  float blur_prob = 0;
  float occlusion_prob = 0;
  float defocus_strength = 0;
};

// 8 classes: {rectangle, ellipse, triangle, cross} x {solid, striped}.
int num_shape_classes();
std::string shape_class_name(int class_id);

struct ClipSpec {
  int num_frames = 8;
  int height = 64, width = 64;
  int num_objects = 3;
  MotionSpeed speed = MotionSpeed::Medium;
  DegradationSpec degradation;
  uint64_t seed = 0;
  int min_size = 14, max_size = 26;
};

// Moving textured shapes over cluttered backgrounds with exact visible-region
// masks. Object boxes are derived from the rasterized masks, so
// box_from_mask(mask) == box holds by construction. Consecutive-frame box IoU
// of every track lands in the requested speed band, or the call throws.
VideoClip generate_clip(const ClipSpec& spec);

// Pseudo ground-truth emulation: each mask is independently eroded/dilated by
// a random margin scaled by its inradius and dropped (replaced by the filled
// box) with drop_prob. Never leaves the image bounds.
std::vector<std::vector<Annotation>> corrupt_masks(const VideoClip& clip, float erosion_frac,
                                                   float dilation_frac, float drop_prob,
                                                   uint64_t seed);

// Mean consecutive-frame IoU bucketing: Slow > 0.9, Medium in [0.7, 0.9],
// Fast < 0.7. Throws on an empty sequence.
MotionSpeed motion_speed_of(const std::vector<float>& consecutive_ious);

// Per-track consecutive-frame IoU sequences of a clip (by track id).
std::vector<std::pair<int, std::vector<float>>> track_iou_sequences(const VideoClip& clip);

}  // namespace faim
