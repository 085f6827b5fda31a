#pragma once

#include <string>
#include <vector>

#include "faim/synthdata.hpp"

namespace faim {

struct DatasetFrame {
  Tensor image;
  std::vector<Annotation> objects;  // ground truth
  std::vector<Annotation> pseudo;   // corrupted masks used as training targets
};

struct DatasetClip {
  std::string id;
  std::string split;  // "train" or "val"
  uint64_t seed = 0;
  MotionSpeed speed = MotionSpeed::Medium;
  bool has_occlusion = false;
  std::vector<DatasetFrame> frames;
};

struct Dataset {
  std::vector<std::string> classes;
  int image_h = 0, image_w = 0;
  std::vector<DatasetClip> clips;

  std::vector<int> split_indices(const std::string& split) const;
};

struct GenerateSpec {
  int train_clips = 500;
  int val_clips = 100;
  int frames_per_clip = 8;
  int height = 64, width = 64;
  int min_objects = 2, max_objects = 3;
  int min_size = 14, max_size = 26;
  DegradationSpec degradation;
  float erosion_frac = 0.15f;
  float dilation_frac = 0.1f;
  float drop_prob = 0.1f;
  uint64_t seed = 0;
  int threads = 0;  // 0 -> hardware_concurrency
};

// Clips cycle through the three motion-speed bands; everything is a pure
// function of (spec.seed, clip index).
Dataset generate_dataset(const GenerateSpec& spec);

// Directory layout: manifest.json + per-frame FVT1 image tensors and
// annotation JSON with RLE masks.
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace faim
