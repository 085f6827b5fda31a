#include "faim/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "faim/rng.hpp"

namespace faim {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (...) {
    throw ConfigError("config: invalid integer for '" + key + "': " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (...) {
    throw ConfigError("config: invalid number for '" + key + "': " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: invalid bool for '" + key + "': " + v);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (...) {
    throw ConfigError("config: invalid seed for '" + key + "': " + v);
  }
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "k") k = parse_int(key, value);
  else if (key == "n_cap") n_cap = parse_int(key, value);
  else if (key == "nms_train") nms_train = parse_double(key, value);
  else if (key == "nms_infer") nms_infer = parse_double(key, value);
  else if (key == "m_train") m_train = parse_int(key, value);
  else if (key == "m_infer") m_infer = parse_int(key, value);
  else if (key == "lambda") lambda = parse_double(key, value);
  else if (key == "heads") heads = parse_int(key, value);
  else if (key == "feature_dim") feature_dim = parse_int(key, value);
  else if (key == "c_prime") c_prime = parse_int(key, value);
  else if (key == "roi_size") roi_size = parse_int(key, value);
  else if (key == "fpn_level") fpn_level = value;
  else if (key == "loss") loss = value;
  else if (key == "aggregation") aggregation = value;
  else if (key == "score_mode") score_mode = value;
  else if (key == "class_aware") class_aware = parse_bool(key, value);
  else if (key == "channels") channels = parse_int(key, value);
  else if (key == "num_classes") num_classes = parse_int(key, value);
  else if (key == "mask_channels") mask_channels = parse_int(key, value);
  else if (key == "samples_per_bin") samples_per_bin = parse_int(key, value);
  else if (key == "image_h") image_h = parse_int(key, value);
  else if (key == "image_w") image_w = parse_int(key, value);
  else if (key == "frames_per_clip") frames_per_clip = parse_int(key, value);
  else if (key == "train_clips") train_clips = parse_int(key, value);
  else if (key == "val_clips") val_clips = parse_int(key, value);
  else if (key == "min_objects") min_objects = parse_int(key, value);
  else if (key == "max_objects") max_objects = parse_int(key, value);
  else if (key == "min_size") min_size = parse_int(key, value);
  else if (key == "max_size") max_size = parse_int(key, value);
  else if (key == "blur_prob") blur_prob = parse_double(key, value);
  else if (key == "occlusion_prob") occlusion_prob = parse_double(key, value);
  else if (key == "defocus_strength") defocus_strength = parse_double(key, value);
  else if (key == "erosion_frac") erosion_frac = parse_double(key, value);
  else if (key == "dilation_frac") dilation_frac = parse_double(key, value);
  else if (key == "drop_prob") drop_prob = parse_double(key, value);
  else if (key == "base_lr") base_lr = parse_double(key, value);
  else if (key == "finetune_lr") finetune_lr = parse_double(key, value);
  else if (key == "min_lr") min_lr = parse_double(key, value);
  else if (key == "warmup_iters") warmup_iters = parse_int(key, value);
  else if (key == "total_iters") total_iters = parse_int(key, value);
  else if (key == "batch_clips") batch_clips = parse_int(key, value);
  else if (key == "freeze_base") freeze_base = parse_bool(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
  else if (key == "mask_train_cap") mask_train_cap = parse_int(key, value);
  else if (key == "pretrain_iters") pretrain_iters = parse_int(key, value);
  else if (key == "finetune_iters") finetune_iters = parse_int(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "seeds") seeds = value;
  else if (key == "dataset_dir") dataset_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "init_from") init_from = value;
  else if (key == "split") split = value;
  else if (key == "ablate_axis") ablate_axis = value;
  else if (key == "threads") threads = parse_int(key, value);
  else if (key == "bench_stage") bench_stage = value;
  else if (key == "bench_sizes") bench_sizes = value;
  else if (key == "bench_repeats") bench_repeats = parse_int(key, value);
  else if (key == "bench_warmup") bench_warmup = parse_int(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");

  if (key == "fpn_level" && value != "P3" && value != "P4" && value != "P5") {
    throw ConfigError("config: fpn_level must be P3|P4|P5");
  }
  if (key == "loss" && value != "bce" && value != "dice") {
    throw ConfigError("config: loss must be bce|dice");
  }
  if (key == "aggregation" && value != "mask" && value != "box" && value != "none") {
    throw ConfigError("config: aggregation must be mask|box|none");
  }
  if (key == "score_mode" && value != "replace" && value != "multiply") {
    throw ConfigError("config: score_mode must be replace|multiply");
  }
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  kv["k"] = std::to_string(k);
  kv["n_cap"] = std::to_string(n_cap);
  kv["nms_train"] = num(nms_train);
  kv["nms_infer"] = num(nms_infer);
  kv["m_train"] = std::to_string(m_train);
  kv["m_infer"] = std::to_string(m_infer);
  kv["lambda"] = num(lambda);
  kv["heads"] = std::to_string(heads);
  kv["feature_dim"] = std::to_string(feature_dim);
  kv["c_prime"] = std::to_string(c_prime);
  kv["roi_size"] = std::to_string(roi_size);
  kv["fpn_level"] = fpn_level;
  kv["loss"] = loss;
  kv["aggregation"] = aggregation;
  kv["score_mode"] = score_mode;
  kv["class_aware"] = class_aware ? "true" : "false";
  kv["channels"] = std::to_string(channels);
  kv["num_classes"] = std::to_string(num_classes);
  kv["mask_channels"] = std::to_string(mask_channels);
  kv["samples_per_bin"] = std::to_string(samples_per_bin);
  kv["image_h"] = std::to_string(image_h);
  kv["image_w"] = std::to_string(image_w);
  kv["frames_per_clip"] = std::to_string(frames_per_clip);
  kv["train_clips"] = std::to_string(train_clips);
  kv["val_clips"] = std::to_string(val_clips);
  kv["min_objects"] = std::to_string(min_objects);
  kv["max_objects"] = std::to_string(max_objects);
  kv["min_size"] = std::to_string(min_size);
  kv["max_size"] = std::to_string(max_size);
  kv["blur_prob"] = num(blur_prob);
  kv["occlusion_prob"] = num(occlusion_prob);
  kv["defocus_strength"] = num(defocus_strength);
  kv["erosion_frac"] = num(erosion_frac);
  kv["dilation_frac"] = num(dilation_frac);
  kv["drop_prob"] = num(drop_prob);
  kv["base_lr"] = num(base_lr);
  kv["finetune_lr"] = num(finetune_lr);
  kv["min_lr"] = num(min_lr);
  kv["warmup_iters"] = std::to_string(warmup_iters);
  kv["total_iters"] = std::to_string(total_iters);
  kv["batch_clips"] = std::to_string(batch_clips);
  kv["freeze_base"] = freeze_base ? "true" : "false";
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["mask_train_cap"] = std::to_string(mask_train_cap);
  kv["pretrain_iters"] = std::to_string(pretrain_iters);
  kv["finetune_iters"] = std::to_string(finetune_iters);
  kv["seed"] = std::to_string(seed);
  kv["seeds"] = seeds;
  kv["dataset_dir"] = dataset_dir;
  kv["out_dir"] = out_dir;
  kv["init_from"] = init_from;
  kv["split"] = split;
  kv["ablate_axis"] = ablate_axis;
  kv["threads"] = std::to_string(threads);
  kv["bench_stage"] = bench_stage;
  kv["bench_sizes"] = bench_sizes;
  kv["bench_repeats"] = std::to_string(bench_repeats);
  kv["bench_warmup"] = std::to_string(bench_warmup);
  std::string out;
  for (const auto& [key, value] : kv) out += key + "=" + value + "\n";
  return out;
}

uint64_t RunConfig::hash() const { return fnv1a(canonical().c_str()); }

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.num_classes = num_classes;
  mc.channels = channels;
  mc.c_prime = c_prime;
  mc.feature_dim = feature_dim;
  mc.heads = heads;
  mc.roi_size = roi_size;
  mc.mask_channels = mask_channels;
  mc.class_aware = class_aware;
  mc.mask_level = fpn_level == "P3" ? Level::P3 : fpn_level == "P4" ? Level::P4 : Level::P5;
  mc.samples_per_bin = samples_per_bin;
  mc.aggregation = aggregation == "mask" ? Aggregation::MaskFeatures
                   : aggregation == "box" ? Aggregation::BoxFeatures
                                          : Aggregation::None;
  mc.mask_loss_kind = loss == "dice" ? MaskLossKind::Dice : MaskLossKind::Bce;
  mc.score_mode = score_mode == "multiply" ? ScoreMode::Multiply : ScoreMode::Replace;
  return mc;
}

RuntimeConfig RunConfig::runtime_config() const {
  RuntimeConfig rt;
  rt.k = k;
  rt.n_cap = n_cap;
  rt.nms_train = static_cast<float>(nms_train);
  rt.nms_infer = static_cast<float>(nms_infer);
  rt.m_train = m_train;
  rt.m_infer = m_infer;
  return rt;
}

TrainConfig RunConfig::train_config(int iters) const {
  TrainConfig tc;
  tc.base_lr = base_lr;
  tc.min_lr = min_lr;
  tc.warmup_iters = warmup_iters;
  tc.total_iters = iters > 0 ? iters : total_iters;
  tc.batch_clips = batch_clips;
  tc.m = m_train;
  tc.lambda = lambda;
  tc.freeze_base = freeze_base;
  tc.seed = seed;
  tc.checkpoint_every = checkpoint_every;
  tc.mask_train_cap = mask_train_cap;
  return tc;
}

GenerateSpec RunConfig::generate_spec() const {
  GenerateSpec gs;
  gs.train_clips = train_clips;
  gs.val_clips = val_clips;
  gs.frames_per_clip = frames_per_clip;
  gs.height = image_h;
  gs.width = image_w;
  gs.min_objects = min_objects;
  gs.max_objects = max_objects;
  gs.min_size = min_size;
  gs.max_size = max_size;
  gs.degradation.blur_prob = static_cast<float>(blur_prob);
  gs.degradation.occlusion_prob = static_cast<float>(occlusion_prob);
  gs.degradation.defocus_strength = static_cast<float>(defocus_strength);
  gs.erosion_frac = static_cast<float>(erosion_frac);
  gs.dilation_frac = static_cast<float>(dilation_frac);
  gs.drop_prob = static_cast<float>(drop_prob);
  gs.seed = seed;
  gs.threads = threads;
  return gs;
}

std::vector<uint64_t> RunConfig::seed_list() const {
  std::vector<uint64_t> out;
  std::stringstream ss(seeds);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_u64("seeds", item));
  }
  if (out.empty()) throw ConfigError("config: seeds list is empty");
  return out;
}

RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const size_t hash_pos = line.find('#');
      if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
      line = trim(line);
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
      }
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  for (const std::string& ov : overrides) {
    std::string s = ov;
    if (s.rfind("--", 0) == 0) s = s.substr(2);
    const size_t eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + ov + "' is not key=value");
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

}  // namespace faim
