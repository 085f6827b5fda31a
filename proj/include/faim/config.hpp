#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "faim/dataset.hpp"
#include "faim/pipeline.hpp"
#include "faim/train.hpp"

namespace faim {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value run configuration. Unknown keys are rejected.
struct RunConfig {
  // selection / aggregation
  int k = 750;
  int n_cap = 30;
  double nms_train = 0.75;
  double nms_infer = 0.5;
  int m_train = 16;
  int m_infer = 32;
  double lambda = 1.0;
  int heads = 4;
  int feature_dim = 64;
  int c_prime = 0;  // 0 -> channels
  int roi_size = 32;
  std::string fpn_level = "P5";
  std::string loss = "bce";          // bce | dice
  std::string aggregation = "mask";  // mask | box | none
  std::string score_mode = "replace";
  bool class_aware = true;

  // model
  int channels = 16;
  int num_classes = 8;
  int mask_channels = 0;
  int samples_per_bin = 2;

  // data generation
  int image_h = 64, image_w = 64;
  int frames_per_clip = 8;
  int train_clips = 500, val_clips = 100;
  int min_objects = 2, max_objects = 3;
  int min_size = 14, max_size = 26;
  double blur_prob = 0.3, occlusion_prob = 0.3, defocus_strength = 0.5;
  double erosion_frac = 0.15, dilation_frac = 0.1, drop_prob = 0.1;

  // training
  double base_lr = 0.05, min_lr = 0.0005;
  double finetune_lr = 0.005;  // fine-tune phase peak lr in the ablate command
  int warmup_iters = 100, total_iters = 1000;
  int batch_clips = 1;
  bool freeze_base = true;
  int checkpoint_every = 500;
  int mask_train_cap = 8;
  int pretrain_iters = 3000;   // used by the ablate command
  int finetune_iters = 2000;   // used by the ablate command

  // run control
  uint64_t seed = 1;
  std::string seeds = "1,2,3,4,5";  // ablation seeds
  std::string dataset_dir = "data";
  std::string out_dir = "runs";
  std::string init_from;  // checkpoint dir for finetune/eval
  std::string split = "val";
  std::string ablate_axis = "aggregation";
  int threads = 0;

  // benchmark command
  std::string bench_stage = "attention";
  std::string bench_sizes = "30,60,120";
  int bench_repeats = 9;
  int bench_warmup = 3;

  void set(const std::string& key, const std::string& value);  // throws ConfigError
  std::string canonical() const;                               // sorted key=value lines
  uint64_t hash() const;

  ModelConfig model_config() const;
  RuntimeConfig runtime_config() const;
  TrainConfig train_config(int iters) const;
  GenerateSpec generate_spec() const;
  std::vector<uint64_t> seed_list() const;
};

// Parses an optional config file then applies --key=value overrides.
RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace faim
