#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "faim/tensor.hpp"

namespace faim {

// Half-open pixel rectangle [x1,x2) x [y1,y2) in absolute coordinates.
struct Box {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool valid() const { return x2 > x1 && y2 > y1; }
  float area() const { return (x2 - x1) * (y2 - y1); }
  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
};

// Intersection over union of two valid boxes; throws on degenerate input.
double iou(const Box& a, const Box& b);

struct BinaryMask {
  int height = 0, width = 0;
  std::vector<uint8_t> bits;  // row-major, 0/1

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<size_t>(h) * w, 0) {}
  uint8_t at(int r, int c) const { return bits[static_cast<size_t>(r) * width + c]; }
  void set(int r, int c, bool v) { bits[static_cast<size_t>(r) * width + c] = v ? 1 : 0; }
  int64_t count() const;
};

// |a AND b| / |a OR b|; two empty masks have IoU 0. Dimensions must match.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct ScoredBox {
  Box box;
  float score = 0;
};

// Greedy NMS: repeatedly keep the highest-scored box (ties broken by lower
// index) and suppress remaining boxes with IoU strictly above the threshold.
// Returns kept indices in score-descending order.
std::vector<int> nms(const std::vector<ScoredBox>& boxes, float threshold);

// Tight bounding box of the set pixels; absent for an empty mask.
std::optional<Box> box_from_mask(const BinaryMask& mask);

// Run-length encoding for annotation files: alternating run counts starting
// with the zero-run, row-major. Full 2x2 mask -> [0,4]; empty 2x2 -> [4].
std::vector<int> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const std::vector<int>& runs, int height, int width);

// RoIAlign on a [C,H,W] tensor; roi given in feature-map coordinates. Each
// output bin is the mean of samples_per_bin^2 bilinear samples taken on a
// regular grid inside the bin. Differentiable w.r.t. fmap.
Tensor roi_align(const Tensor& fmap, const Box& roi, int out_h, int out_w, int samples_per_bin);

}  // namespace faim
