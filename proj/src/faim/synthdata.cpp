#include "faim/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>

#include "faim/rng.hpp"

namespace faim {

namespace {

constexpr int kShapes = 4;  // rect, ellipse, triangle, cross
constexpr float kMaxSpeedFrac = 0.25f;
constexpr int kMinVisiblePixels = 6;

struct ShapeState {
  int shape = 0;    // 0 rect, 1 ellipse, 2 triangle, 3 cross
  int texture = 0;  // 0 solid, 1 striped
  float r = 0.5f, g = 0.5f, b = 0.5f;
  float cx = 0, cy = 0;
  float vx = 0, vy = 0;
  float w = 10, h = 10;
  float scale_amp = 0, scale_phase = 0;
  float stripe_angle = 0, stripe_period = 4;

  int class_id() const { return shape * 2 + texture; }
};

bool inside_shape(const ShapeState& s, float px, float py, float scale) {
  const float hw = 0.5f * s.w * scale, hh = 0.5f * s.h * scale;
  const float dx = px - s.cx, dy = py - s.cy;
  switch (s.shape) {
    case 0:
      return std::fabs(dx) <= hw && std::fabs(dy) <= hh;
    case 1: {
      const float nx = dx / hw, ny = dy / hh;
      return nx * nx + ny * ny <= 1.0f;
    }
    case 2: {
      // Isoceles triangle: apex up, base at the bottom.
      if (dy < -hh || dy > hh) return false;
      const float t = (dy + hh) / (2.0f * hh);  // 0 at apex, 1 at base
      return std::fabs(dx) <= hw * t;
    }
    default: {
      const float aw = hw / 3.0f, ah = hh / 3.0f;  // arm half-widths
      const bool vertical = std::fabs(dx) <= aw && std::fabs(dy) <= hh;
      const bool horizontal = std::fabs(dy) <= ah && std::fabs(dx) <= hw;
      return vertical || horizontal;
    }
  }
}

void shape_color_at(const ShapeState& s, float px, float py, float out[3]) {
  float r = s.r, g = s.g, b = s.b;
  if (s.texture == 1) {
    const float u = (px - s.cx) * std::cos(s.stripe_angle) + (py - s.cy) * std::sin(s.stripe_angle);
    const int band = static_cast<int>(std::floor(u / s.stripe_period));
    if (((band % 2) + 2) % 2 == 1) {
      r *= 0.4f;
      g *= 0.4f;
      b *= 0.4f;
    }
  }
  out[0] = r;
  out[1] = g;
  out[2] = b;
}

float scale_at(const ShapeState& s, int t, int num_frames) {
  return 1.0f + s.scale_amp * std::sin(2.0f * static_cast<float>(M_PI) * t /
                                           std::max(1, num_frames) +
                                       s.scale_phase);
}

void box_blur(std::vector<float>& plane, int h, int w, int radius, std::vector<float>& tmp) {
  tmp.assign(plane.size(), 0.0f);
  const int k = 2 * radius + 1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int d = -radius; d <= radius; ++d) {
        int xx = std::clamp(x + d, 0, w - 1);
        acc += plane[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc / k;
    }
  }
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      float acc = 0;
      for (int d = -radius; d <= radius; ++d) {
        int yy = std::clamp(y + d, 0, h - 1);
        acc += tmp[static_cast<size_t>(yy) * w + x];
      }
      plane[static_cast<size_t>(y) * w + x] = acc / k;
    }
  }
}

struct RenderResult {
  Tensor frame;
  std::vector<BinaryMask> visible;  // per object
};

RenderResult render_frame(const std::vector<ShapeState>& objects,
                          const std::vector<ShapeState>& clutter, int t, const ClipSpec& spec,
                          bool blur_this_frame, Rng& noise_rng) {
  const int h = spec.height, w = spec.width;
  std::vector<float> planes(static_cast<size_t>(3) * h * w);
  std::vector<int> owner(static_cast<size_t>(h) * w, -1);

  // Muted background gradient keyed off the clip seed via the first clutter
  // entry's color (stable across frames).
  const float base_r = 0.35f, base_g = 0.38f, base_b = 0.35f;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const float shade = 0.9f + 0.2f * (static_cast<float>(x + y) / (h + w));
      planes[i] = base_r * shade;
      planes[static_cast<size_t>(h) * w + i] = base_g * shade;
      planes[2 * static_cast<size_t>(h) * w + i] = base_b * shade;
    }

  auto draw = [&](const ShapeState& s, float scale, int owner_id) {
    const float hw = 0.5f * s.w * scale, hh = 0.5f * s.h * scale;
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - hw)) - 1);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(s.cx + hw)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - hh)) - 1);
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(s.cy + hh)) + 1);
    float rgb[3];
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!inside_shape(s, x + 0.5f, y + 0.5f, scale)) continue;
        const size_t i = static_cast<size_t>(y) * w + x;
        shape_color_at(s, x + 0.5f, y + 0.5f, rgb);
        planes[i] = rgb[0];
        planes[static_cast<size_t>(h) * w + i] = rgb[1];
        planes[2 * static_cast<size_t>(h) * w + i] = rgb[2];
        owner[i] = owner_id;
      }
  };

  for (const ShapeState& c : clutter) draw(c, 1.0f, -1);
  for (size_t oi = 0; oi < objects.size(); ++oi) {
    draw(objects[oi], scale_at(objects[oi], t, spec.num_frames), static_cast<int>(oi));
  }

  RenderResult out;
  out.visible.assign(objects.size(), BinaryMask(h, w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int o = owner[static_cast<size_t>(y) * w + x];
      if (o >= 0) out.visible[static_cast<size_t>(o)].set(y, x, true);
    }

  if (blur_this_frame) {
    const int radius = 1 + static_cast<int>(std::lround(spec.degradation.defocus_strength * 2.0f));
    std::vector<float> tmp;
    for (int c = 0; c < 3; ++c) {
      std::vector<float> plane(planes.begin() + static_cast<size_t>(c) * h * w,
                               planes.begin() + static_cast<size_t>(c + 1) * h * w);
      box_blur(plane, h, w, radius, tmp);
      std::copy(plane.begin(), plane.end(), planes.begin() + static_cast<size_t>(c) * h * w);
    }
  }
  for (float& v : planes) {
    v = std::clamp(v + noise_rng.uniform(-0.015f, 0.015f), 0.0f, 1.0f);
  }
  out.frame = Tensor::from_data({3, h, w}, std::move(planes));
  return out;
}

// Band targets used to pick per-object velocities; verified after rendering.
void speed_band(MotionSpeed s, float& lo, float& hi) {
  switch (s) {
    case MotionSpeed::Slow:
      lo = 0.905f;
      hi = 1.0f;
      break;
    case MotionSpeed::Medium:
      lo = 0.72f;
      hi = 0.88f;
      break;
    default:
      lo = 0.30f;
      hi = 0.68f;
      break;
  }
}

}  // namespace

int num_shape_classes() { return kShapes * 2; }

std::string shape_class_name(int class_id) {
  static const char* shapes[] = {"rect", "ellipse", "triangle", "cross"};
  static const char* textures[] = {"solid", "striped"};
  if (class_id < 0 || class_id >= num_shape_classes()) {
    throw std::invalid_argument("shape_class_name: bad class id");
  }
  return std::string(shapes[class_id / 2]) + "_" + textures[class_id % 2];
}

const char* motion_speed_name(MotionSpeed s) {
  switch (s) {
    case MotionSpeed::Slow: return "slow";
    case MotionSpeed::Medium: return "medium";
    default: return "fast";
  }
}

MotionSpeed motion_speed_from_name(const std::string& name) {
  if (name == "slow") return MotionSpeed::Slow;
  if (name == "medium") return MotionSpeed::Medium;
  if (name == "fast") return MotionSpeed::Fast;
  throw std::invalid_argument("unknown motion speed '" + name + "'");
}

MotionSpeed motion_speed_of(const std::vector<float>& consecutive_ious) {
  if (consecutive_ious.empty()) throw std::invalid_argument("motion_speed_of: empty sequence");
  double m = 0;
  for (float v : consecutive_ious) m += v;
  m /= static_cast<double>(consecutive_ious.size());
  // Compare at f32 so that an input of exactly 0.9f or 0.7f buckets Medium.
  const float mf = static_cast<float>(m);
  if (mf > 0.9f) return MotionSpeed::Slow;
  if (mf < 0.7f) return MotionSpeed::Fast;
  return MotionSpeed::Medium;
}

std::vector<std::pair<int, std::vector<float>>> track_iou_sequences(const VideoClip& clip) {
  std::map<int, std::vector<float>> seqs;
  for (size_t t = 0; t + 1 < clip.annotations.size(); ++t) {
    for (const Annotation& a : clip.annotations[t]) {
      for (const Annotation& b : clip.annotations[t + 1]) {
        if (a.track_id == b.track_id) seqs[a.track_id].push_back(iou(a.box, b.box));
      }
    }
  }
  std::vector<std::pair<int, std::vector<float>>> out(seqs.begin(), seqs.end());
  return out;
}

VideoClip generate_clip(const ClipSpec& spec) {
  if (spec.height % 32 != 0 || spec.width % 32 != 0) {
    throw std::invalid_argument("generate_clip: H and W must be divisible by 32");
  }
  if (spec.num_objects < 1) throw std::invalid_argument("generate_clip: num_objects >= 1");
  if (spec.num_frames < 1) throw std::invalid_argument("generate_clip: num_frames >= 1");

  float band_lo, band_hi;
  speed_band(spec.speed, band_lo, band_hi);
  const float max_speed = kMaxSpeedFrac * std::min(spec.height, spec.width);

  Rng rng(mix_seed(spec.seed, 0xC11Full));
  const int attempts = 25;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    // Clutter: static distractor shapes drawn under the objects.
    std::vector<ShapeState> clutter;
    const int nc = 5 + rng.next_int(5);
    for (int i = 0; i < nc; ++i) {
      ShapeState c;
      c.shape = rng.next_int(2);  // rects and ellipses only
      c.texture = rng.next_int(2);
      c.r = rng.uniform(0.2f, 0.9f);
      c.g = rng.uniform(0.2f, 0.9f);
      c.b = rng.uniform(0.2f, 0.9f);
      c.w = rng.uniform(6.0f, 20.0f);
      c.h = rng.uniform(6.0f, 20.0f);
      c.cx = rng.uniform(0.0f, static_cast<float>(spec.width));
      c.cy = rng.uniform(0.0f, static_cast<float>(spec.height));
      c.stripe_angle = rng.uniform(0.0f, static_cast<float>(M_PI));
      c.stripe_period = rng.uniform(2.5f, 5.0f);
      clutter.push_back(c);
    }

    // Slow clips use lattice-aligned 1px/frame horizontal motion in disjoint
    // strips: translated-by-one boxes give IoU (w-1)/(w+1) > 0.9 for w >= 21
    // with no rasterization jitter. The other bands sample free velocities
    // and are verified below.
    const bool slow = spec.speed == MotionSpeed::Slow;
    const int n_objs = slow ? std::min(spec.num_objects, 2) : spec.num_objects;
    std::vector<ShapeState> objects;
    for (int i = 0; i < n_objs; ++i) {
      ShapeState s;
      s.shape = rng.next_int(kShapes);
      s.texture = rng.next_int(2);
      s.r = rng.uniform(0.35f, 1.0f);
      s.g = rng.uniform(0.35f, 1.0f);
      s.b = rng.uniform(0.35f, 1.0f);
      s.stripe_angle = rng.uniform(0.0f, static_cast<float>(M_PI));
      s.stripe_period = rng.uniform(3.0f, 4.5f);
      if (slow) {
        const int size = 22 + 2 * rng.next_int(2);
        s.w = static_cast<float>(size);
        s.h = static_cast<float>(size);
        s.scale_amp = 0.0f;
        s.vx = rng.bernoulli(0.5) ? 1.0f : -1.0f;
        s.vy = 0.0f;
        const int strip_h = spec.height / n_objs;
        const int margin = size / 2 + 2;
        s.cy = static_cast<float>(strip_h * i + strip_h / 2);
        s.cx = static_cast<float>(margin + rng.next_int(std::max(1, spec.width - 2 * margin)));
      } else if (spec.speed == MotionSpeed::Medium) {
        // Lattice motion with a 2px axis step: box IoU is exactly
        // (s-2)/(s+2), inside [0.7, 0.9] for every even size in [14, 24].
        const int size = 2 * (7 + rng.next_int(6));
        s.w = static_cast<float>(size);
        s.h = static_cast<float>(size);
        s.scale_amp = 0.0f;
        const float v = rng.bernoulli(0.5) ? 2.0f : -2.0f;
        if (rng.bernoulli(0.5)) {
          s.vx = v;
        } else {
          s.vy = v;
        }
        const int margin = size / 2 + 2;
        s.cx = static_cast<float>(margin + rng.next_int(std::max(1, spec.width - 2 * margin)));
        s.cy = static_cast<float>(margin + rng.next_int(std::max(1, spec.height - 2 * margin)));
      } else {
        const float size = rng.uniform(static_cast<float>(spec.min_size),
                                       static_cast<float>(spec.max_size));
        s.w = size;
        s.h = size * rng.uniform(0.8f, 1.25f);
        s.scale_amp = rng.uniform(0.0f, 0.04f);
        s.scale_phase = rng.uniform(0.0f, 2.0f * static_cast<float>(M_PI));
        // Velocity magnitude from the bounding-box IoU model of an axis shift:
        // iou(d) = (size-d)/(size+d)  =>  d = size (1-t)/(1+t).
        const float target = 0.5f * (band_lo + band_hi);
        float speed = size * (1.0f - target) / (1.0f + target);
        if (speed > max_speed) {
          throw std::invalid_argument("generate_clip: IoU band unreachable within speed limits");
        }
        // Nudge the magnitude on retries, staying inside the speed limit.
        speed = std::min(speed * (1.0f + 0.05f * static_cast<float>(attempt)), max_speed);
        const float ang = rng.uniform(0.0f, 2.0f * static_cast<float>(M_PI));
        s.vx = speed * std::cos(ang);
        s.vy = speed * std::sin(ang);
        const float margin_x = 0.5f * s.w + 2.0f;
        const float margin_y = 0.5f * s.h + 2.0f;
        s.cx = rng.uniform(margin_x, spec.width - margin_x);
        s.cy = rng.uniform(margin_y, spec.height - margin_y);
      }
      objects.push_back(s);
    }

    // Occlusion steering: put a later object on a collision course with an
    // earlier one at the clip midpoint; z-order makes the earlier one
    // partially hidden while its box still contains occluder pixels.
    for (size_t i = 1; i < objects.size(); ++i) {
      if (!slow && rng.next_double() < spec.degradation.occlusion_prob) {
        const size_t j = static_cast<size_t>(rng.next_int(static_cast<int>(i)));
        const int tm = spec.num_frames / 2;
        const float jx = objects[j].cx + objects[j].vx * tm;
        const float jy = objects[j].cy + objects[j].vy * tm;
        float cx = std::clamp(jx - objects[i].vx * tm + rng.uniform(-2.0f, 2.0f),
                              0.5f * objects[i].w, spec.width - 0.5f * objects[i].w);
        float cy = std::clamp(jy - objects[i].vy * tm + rng.uniform(-2.0f, 2.0f),
                              0.5f * objects[i].h, spec.height - 0.5f * objects[i].h);
        if (spec.speed == MotionSpeed::Medium) {
          cx = std::round(cx);  // keep the lattice
          cy = std::round(cy);
        }
        objects[i].cx = cx;
        objects[i].cy = cy;
      }
    }

    VideoClip clip;
    clip.seed = spec.seed;
    Rng frame_rng(mix_seed(spec.seed, 0xF0A4ull + static_cast<uint64_t>(attempt)));
    std::vector<ShapeState> state = objects;
    for (int t = 0; t < spec.num_frames; ++t) {
      const bool blur = frame_rng.next_double() < spec.degradation.blur_prob;
      RenderResult rr = render_frame(state, clutter, t, spec, blur, frame_rng);
      clip.frames.push_back(rr.frame);
      std::vector<Annotation> anns;
      for (size_t oi = 0; oi < state.size(); ++oi) {
        const BinaryMask& vis = rr.visible[oi];
        if (vis.count() < kMinVisiblePixels) continue;
        Annotation ann;
        ann.mask = vis;
        ann.box = *box_from_mask(vis);
        ann.class_id = state[oi].class_id();
        ann.track_id = static_cast<int>(oi);
        anns.push_back(std::move(ann));
      }
      clip.annotations.push_back(std::move(anns));

      // Advance with reflection at the walls (object stays fully inside).
      for (ShapeState& s : state) {
        s.cx += s.vx;
        s.cy += s.vy;
        const float mx = 0.5f * s.w + 1.0f, my = 0.5f * s.h + 1.0f;
        if (s.cx < mx) { s.cx = 2 * mx - s.cx; s.vx = -s.vx; }
        if (s.cx > spec.width - mx) { s.cx = 2 * (spec.width - mx) - s.cx; s.vx = -s.vx; }
        if (s.cy < my) { s.cy = 2 * my - s.cy; s.vy = -s.vy; }
        if (s.cy > spec.height - my) { s.cy = 2 * (spec.height - my) - s.cy; s.vy = -s.vy; }
      }
    }

    // Verify the motion band on the realized annotation boxes.
    bool ok = true;
    for (const auto& [track, seq] : track_iou_sequences(clip)) {
      if (seq.empty()) continue;
      double m = 0;
      for (float v : seq) m += v;
      m /= static_cast<double>(seq.size());
      const bool in_band = (spec.speed == MotionSpeed::Slow && m > 0.9) ||
                           (spec.speed == MotionSpeed::Medium && m >= 0.7 && m <= 0.9) ||
                           (spec.speed == MotionSpeed::Fast && m < 0.7);
      if (!in_band) {
        ok = false;
        break;
      }
    }
    if (!ok && spec.num_frames > 1) continue;

    for (size_t t = 0; t < clip.annotations.size() && !clip.has_occlusion; ++t) {
      const auto& anns = clip.annotations[t];
      for (size_t a = 0; a < anns.size() && !clip.has_occlusion; ++a)
        for (size_t b = a + 1; b < anns.size(); ++b)
          if (iou(anns[a].box, anns[b].box) > 0.03f) {
            clip.has_occlusion = true;
            break;
          }
    }
    return clip;
  }
  throw std::invalid_argument("generate_clip: IoU band unreachable within speed limits");
}

namespace {

std::vector<int> distance_transform(const BinaryMask& m) {
  // 4-neighbour BFS distance to the nearest background pixel (the outside of
  // the image counts as background).
  const int h = m.height, w = m.width;
  std::vector<int> dist(static_cast<size_t>(h) * w, -1);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m.at(y, x)) continue;
      const bool border = y == 0 || y == h - 1 || x == 0 || x == w - 1 || !m.at(y - 1, x) ||
                          !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
      if (border) {
        dist[static_cast<size_t>(y) * w + x] = 1;
        queue.emplace_back(y, x);
      }
    }
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<size_t>(y) * w + x];
    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const int ny = y + dy[k], nx = x + dx[k];
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      if (!m.at(ny, nx)) continue;
      auto& dv = dist[static_cast<size_t>(ny) * w + nx];
      if (dv < 0) {
        dv = d + 1;
        queue.emplace_back(ny, nx);
      }
    }
  }
  return dist;
}

BinaryMask erode(const BinaryMask& m, int margin, const std::vector<int>& dist) {
  if (margin <= 0) return m;
  BinaryMask out(m.height, m.width);
  for (size_t i = 0; i < m.bits.size(); ++i) out.bits[i] = (m.bits[i] && dist[i] > margin) ? 1 : 0;
  return out;
}

BinaryMask dilate(const BinaryMask& m, int margin) {
  if (margin <= 0) return m;
  BinaryMask cur = m;
  for (int step = 0; step < margin; ++step) {
    BinaryMask next = cur;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        if (cur.at(y, x)) continue;
        const bool touch = (y > 0 && cur.at(y - 1, x)) || (y + 1 < m.height && cur.at(y + 1, x)) ||
                           (x > 0 && cur.at(y, x - 1)) || (x + 1 < m.width && cur.at(y, x + 1));
        if (touch) next.set(y, x, true);
      }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

std::vector<std::vector<Annotation>> corrupt_masks(const VideoClip& clip, float erosion_frac,
                                                   float dilation_frac, float drop_prob,
                                                   uint64_t seed) {
  if (erosion_frac < 0 || erosion_frac > 0.5f || dilation_frac < 0 || dilation_frac > 0.5f) {
    throw std::invalid_argument("corrupt_masks: fractions must be in [0,0.5]");
  }
  if (drop_prob < 0 || drop_prob > 0.5f) {
    throw std::invalid_argument("corrupt_masks: drop_prob must be in [0,0.5]");
  }
  Rng rng(mix_seed(seed, 0xD0D0ull));
  std::vector<std::vector<Annotation>> out;
  for (const auto& frame_anns : clip.annotations) {
    std::vector<Annotation> pseudo;
    for (const Annotation& ann : frame_anns) {
      Annotation p = ann;
      if (rng.next_double() < drop_prob) {
        // Fall back to the filled box rectangle.
        BinaryMask filled(ann.mask.height, ann.mask.width);
        const int x1 = std::max(0, static_cast<int>(std::floor(ann.box.x1)));
        const int y1 = std::max(0, static_cast<int>(std::floor(ann.box.y1)));
        const int x2 = std::min(ann.mask.width, static_cast<int>(std::ceil(ann.box.x2)));
        const int y2 = std::min(ann.mask.height, static_cast<int>(std::ceil(ann.box.y2)));
        for (int y = y1; y < y2; ++y)
          for (int x = x1; x < x2; ++x) filled.set(y, x, true);
        p.mask = std::move(filled);
      } else {
        const std::vector<int> dist = distance_transform(ann.mask);
        int inradius = 0;
        for (int d : dist) inradius = std::max(inradius, d);
        const int em = static_cast<int>(std::floor(rng.uniform(0.0f, erosion_frac) * inradius));
        const int dm = static_cast<int>(std::floor(rng.uniform(0.0f, dilation_frac) * inradius));
        BinaryMask m = erode(ann.mask, em, dist);
        if (m.count() == 0) m = ann.mask;  // never hand training an empty target
        p.mask = dilate(m, dm);
      }
      pseudo.push_back(std::move(p));
    }
    out.push_back(std::move(pseudo));
  }
  return out;
}

}  // namespace faim
