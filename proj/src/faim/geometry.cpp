#include "faim/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "faim/flops.hpp"

namespace faim {

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double ix = std::max(0.0, static_cast<double>(std::min(a.x2, b.x2)) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, static_cast<double>(std::min(a.y2, b.y2)) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return inter / uni;
}

int64_t BinaryMask::count() const {
  int64_t n = 0;
  for (uint8_t b : bits) n += b ? 1 : 0;
  return n;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mask_iou: dimension mismatch");
  }
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    const bool av = a.bits[i] != 0, bv = b.bits[i] != 0;
    inter += (av && bv) ? 1 : 0;
    uni += (av || bv) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> nms(const std::vector<ScoredBox>& boxes, float threshold) {
  if (!(threshold > 0.0f && threshold <= 1.0f)) {
    throw std::invalid_argument("nms: threshold must be in (0,1]");
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&boxes](int a, int b) {
    if (boxes[a].score != boxes[b].score) return boxes[a].score > boxes[b].score;
    return a < b;
  });
  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<int> kept;
  for (size_t i = 0; i < order.size(); ++i) {
    const int idx = order[i];
    if (suppressed[idx]) continue;
    kept.push_back(idx);
    for (size_t j = i + 1; j < order.size(); ++j) {
      const int other = order[j];
      if (suppressed[other]) continue;
      if (iou(boxes[idx].box, boxes[other].box) > threshold) suppressed[other] = 1;
    }
  }
  return kept;
}

std::optional<Box> box_from_mask(const BinaryMask& mask) {
  int min_r = mask.height, max_r = -1, min_c = mask.width, max_c = -1;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
      }
  if (max_r < 0) return std::nullopt;
  return Box{static_cast<float>(min_c), static_cast<float>(min_r), static_cast<float>(max_c + 1),
             static_cast<float>(max_r + 1)};
}

std::vector<int> rle_encode(const BinaryMask& mask) {
  std::vector<int> runs;
  uint8_t current = 0;  // encoding starts with the zero-run
  int count = 0;
  for (uint8_t b : mask.bits) {
    const uint8_t v = b ? 1 : 0;
    if (v == current) {
      ++count;
    } else {
      runs.push_back(count);
      current = v;
      count = 1;
    }
  }
  runs.push_back(count);
  return runs;
}

BinaryMask rle_decode(const std::vector<int>& runs, int height, int width) {
  BinaryMask mask(height, width);
  size_t pos = 0;
  uint8_t current = 0;
  for (int run : runs) {
    if (run < 0 || pos + static_cast<size_t>(run) > mask.bits.size()) {
      throw std::invalid_argument("rle_decode: runs exceed mask size");
    }
    if (current) std::fill(mask.bits.begin() + pos, mask.bits.begin() + pos + run, 1);
    pos += static_cast<size_t>(run);
    current = current ? 0 : 1;
  }
  if (pos != mask.bits.size()) throw std::invalid_argument("rle_decode: runs do not cover mask");
  return mask;
}

namespace {
struct Tap {
  int r0, r1, c0, c1;
  double w00, w01, w10, w11;
};

// Bilinear taps at continuous point (x,y); pixel (r,c) has its center at
// (c+0.5, r+0.5). Coordinates are clamped to the map.
Tap make_tap(double y, double x, int h, int w) {
  double v = std::min(std::max(y - 0.5, 0.0), static_cast<double>(h - 1));
  double u = std::min(std::max(x - 0.5, 0.0), static_cast<double>(w - 1));
  const int r0 = static_cast<int>(std::floor(v));
  const int c0 = static_cast<int>(std::floor(u));
  const int r1 = std::min(r0 + 1, h - 1);
  const int c1 = std::min(c0 + 1, w - 1);
  const double fy = v - r0, fx = u - c0;
  return Tap{r0, r1, c0, c1, (1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx};
}
}  // namespace

Tensor roi_align(const Tensor& fmap, const Box& roi, int out_h, int out_w, int samples_per_bin) {
  if (fmap.rank() != 3) throw std::invalid_argument("roi_align: fmap must be [C,H,W]");
  if (!roi.valid()) throw std::invalid_argument("roi_align: zero-area roi");
  if (out_h < 1 || out_w < 1 || samples_per_bin < 1) {
    throw std::invalid_argument("roi_align: bad output spec");
  }
  const int c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  const int s = samples_per_bin;
  const double bin_h = static_cast<double>(roi.height()) / out_h;
  const double bin_w = static_cast<double>(roi.width()) / out_w;

  std::vector<Tap> taps;
  taps.reserve(static_cast<size_t>(out_h) * out_w * s * s);
  for (int by = 0; by < out_h; ++by)
    for (int bx = 0; bx < out_w; ++bx)
      for (int sy = 0; sy < s; ++sy)
        for (int sx = 0; sx < s; ++sx) {
          const double y = roi.y1 + (by + (sy + 0.5) / s) * bin_h;
          const double x = roi.x1 + (bx + (sx + 0.5) / s) * bin_w;
          taps.push_back(make_tap(y, x, h, w));
        }

  Tensor out = make_op_output({c, out_h, out_w}, {&fmap});
  if (FlopCounts* fc = current_flops()) {
    fc->roi_samples += static_cast<uint64_t>(c) * out_h * out_w * s * s;
  }
  const double inv_n = 1.0 / (s * s);
  for (int ch = 0; ch < c; ++ch) {
    const float* ip = fmap.data() + static_cast<int64_t>(ch) * h * w;
    float* op = out.data() + static_cast<int64_t>(ch) * out_h * out_w;
    size_t t = 0;
    for (int64_t bin = 0; bin < static_cast<int64_t>(out_h) * out_w; ++bin) {
      double acc = 0.0;
      for (int k = 0; k < s * s; ++k, ++t) {
        const Tap& tp = taps[t];
        acc += tp.w00 * ip[static_cast<int64_t>(tp.r0) * w + tp.c0] +
               tp.w01 * ip[static_cast<int64_t>(tp.r0) * w + tp.c1] +
               tp.w10 * ip[static_cast<int64_t>(tp.r1) * w + tp.c0] +
               tp.w11 * ip[static_cast<int64_t>(tp.r1) * w + tp.c1];
      }
      op[bin] = static_cast<float>(acc * inv_n);
    }
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* fi = fmap.impl().get();
    auto taps_sp = std::make_shared<std::vector<Tap>>(std::move(taps));
    const int ss = s * s;
    out.impl()->backward = [o, fi, taps_sp, c, h, w, out_h, out_w, ss, inv_n]() {
      fi->ensure_grad();
      for (int ch = 0; ch < c; ++ch) {
        const double* gp = o->grad.data() + static_cast<int64_t>(ch) * out_h * out_w;
        double* gx = fi->grad.data() + static_cast<int64_t>(ch) * h * w;
        size_t t = 0;
        for (int64_t bin = 0; bin < static_cast<int64_t>(out_h) * out_w; ++bin) {
          const double gv = gp[bin] * inv_n;
          for (int k = 0; k < ss; ++k, ++t) {
            const Tap& tp = (*taps_sp)[t];
            gx[static_cast<int64_t>(tp.r0) * w + tp.c0] += gv * tp.w00;
            gx[static_cast<int64_t>(tp.r0) * w + tp.c1] += gv * tp.w01;
            gx[static_cast<int64_t>(tp.r1) * w + tp.c0] += gv * tp.w10;
            gx[static_cast<int64_t>(tp.r1) * w + tp.c1] += gv * tp.w11;
          }
        }
      }
    };
  }
  return out;
}

}  // namespace faim
