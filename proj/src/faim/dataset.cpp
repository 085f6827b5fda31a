#include "faim/dataset.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <mutex>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "faim/fvt.hpp"
#include "faim/rng.hpp"

namespace faim {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> Dataset::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

DatasetClip make_clip(const GenerateSpec& spec, int index, const std::string& split) {
  Rng rng(mix_seed(spec.seed, 0xC11B00ull + static_cast<uint64_t>(index)));
  ClipSpec cs;
  cs.num_frames = spec.frames_per_clip;
  cs.height = spec.height;
  cs.width = spec.width;
  cs.num_objects = spec.min_objects + rng.next_int(spec.max_objects - spec.min_objects + 1);
  cs.min_size = spec.min_size;
  cs.max_size = spec.max_size;
  cs.speed = static_cast<MotionSpeed>(index % 3);
  cs.degradation = spec.degradation;
  cs.seed = rng.next_u64();

  VideoClip clip = generate_clip(cs);
  auto pseudo = corrupt_masks(clip, spec.erosion_frac, spec.dilation_frac, spec.drop_prob,
                              mix_seed(cs.seed, 0x9595ull));

  DatasetClip out;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%05d", index);
  out.id = buf;
  out.split = split;
  out.seed = cs.seed;
  out.speed = cs.speed;
  out.has_occlusion = clip.has_occlusion;
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    DatasetFrame fr;
    fr.image = clip.frames[t];
    fr.objects = clip.annotations[t];
    fr.pseudo = pseudo[t];
    out.frames.push_back(std::move(fr));
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const GenerateSpec& spec) {
  Dataset ds;
  for (int c = 0; c < num_shape_classes(); ++c) ds.classes.push_back(shape_class_name(c));
  ds.image_h = spec.height;
  ds.image_w = spec.width;
  const int total = spec.train_clips + spec.val_clips;
  ds.clips.resize(static_cast<size_t>(total));

  int workers = spec.threads > 0 ? spec.threads
                                 : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, total));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    try {
      for (int i = next.fetch_add(1); i < total; i = next.fetch_add(1)) {
        ds.clips[static_cast<size_t>(i)] =
            make_clip(spec, i, i < spec.train_clips ? "train" : "val");
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(total);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return ds;
}

namespace {

json annotation_to_json(const Annotation& gt, const Annotation* pseudo) {
  json j;
  j["box"] = {gt.box.x1, gt.box.y1, gt.box.x2, gt.box.y2};
  j["class_id"] = gt.class_id;
  j["track_id"] = gt.track_id;
  j["h"] = gt.mask.height;
  j["w"] = gt.mask.width;
  j["rle"] = rle_encode(gt.mask);
  if (pseudo) j["rle_pseudo"] = rle_encode(pseudo->mask);
  return j;
}

Annotation annotation_from_json(const json& j, bool use_pseudo) {
  Annotation a;
  a.box = Box{j.at("box")[0].get<float>(), j.at("box")[1].get<float>(),
              j.at("box")[2].get<float>(), j.at("box")[3].get<float>()};
  a.class_id = j.at("class_id").get<int>();
  a.track_id = j.at("track_id").get<int>();
  const int h = j.at("h").get<int>(), w = j.at("w").get<int>();
  const char* key = use_pseudo && j.contains("rle_pseudo") ? "rle_pseudo" : "rle";
  a.mask = rle_decode(j.at(key).get<std::vector<int>>(), h, w);
  return a;
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["classes"] = ds.classes;
  manifest["image_h"] = ds.image_h;
  manifest["image_w"] = ds.image_w;
  json clips = json::array();
  for (const DatasetClip& clip : ds.clips) {
    fs::create_directories(fs::path(dir) / clip.id);
    json cj;
    cj["id"] = clip.id;
    cj["split"] = clip.split;
    cj["seed"] = clip.seed;
    cj["speed"] = motion_speed_name(clip.speed);
    cj["has_occlusion"] = clip.has_occlusion;
    json frames = json::array();
    for (size_t t = 0; t < clip.frames.size(); ++t) {
      const DatasetFrame& fr = clip.frames[t];
      const std::string img_rel = clip.id + "/f" + std::to_string(t) + ".fvt";
      const std::string ann_rel = clip.id + "/f" + std::to_string(t) + ".json";
      save_tensor((fs::path(dir) / img_rel).string(), fr.image);
      json aj;
      json objs = json::array();
      for (size_t k = 0; k < fr.objects.size(); ++k) {
        const Annotation* pseudo = k < fr.pseudo.size() ? &fr.pseudo[k] : nullptr;
        objs.push_back(annotation_to_json(fr.objects[k], pseudo));
      }
      aj["objects"] = objs;
      std::ofstream os((fs::path(dir) / ann_rel).string());
      os << aj.dump() << "\n";
      if (!os) throw std::runtime_error("write_dataset: failed to write " + ann_rel);
      frames.push_back({{"image", img_rel}, {"ann", ann_rel}});
    }
    cj["frames"] = frames;
    clips.push_back(cj);
  }
  manifest["clips"] = clips;
  std::ofstream os((fs::path(dir) / "manifest.json").string());
  os << manifest.dump(2) << "\n";
  if (!os) throw std::runtime_error("write_dataset: failed to write manifest.json");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is((fs::path(dir) / "manifest.json").string());
  if (!is) throw std::runtime_error("load_dataset: missing manifest.json in " + dir);
  json manifest = json::parse(is);
  Dataset ds;
  ds.classes = manifest.at("classes").get<std::vector<std::string>>();
  ds.image_h = manifest.at("image_h").get<int>();
  ds.image_w = manifest.at("image_w").get<int>();
  for (const json& cj : manifest.at("clips")) {
    DatasetClip clip;
    clip.id = cj.at("id").get<std::string>();
    clip.split = cj.at("split").get<std::string>();
    clip.seed = cj.at("seed").get<uint64_t>();
    clip.speed = motion_speed_from_name(cj.at("speed").get<std::string>());
    clip.has_occlusion = cj.at("has_occlusion").get<bool>();
    for (const json& fj : cj.at("frames")) {
      DatasetFrame fr;
      fr.image = load_tensor((fs::path(dir) / fj.at("image").get<std::string>()).string());
      std::ifstream as((fs::path(dir) / fj.at("ann").get<std::string>()).string());
      if (!as) throw std::runtime_error("load_dataset: missing annotation file");
      json aj = json::parse(as);
      for (const json& oj : aj.at("objects")) {
        fr.objects.push_back(annotation_from_json(oj, false));
        fr.pseudo.push_back(annotation_from_json(oj, true));
      }
      clip.frames.push_back(std::move(fr));
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

}  // namespace faim
