#include "faim/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "faim/ops.hpp"

namespace faim {

void add_detector_params(Parameters& p, const ModelConfig& cfg) {
  const int c = cfg.channels;
  p.add_conv("backbone.c1.w", c, 3, 3, 3);
  p.add_zeros("backbone.c1.b", {c});
  for (int i = 2; i <= 5; ++i) {
    const std::string base = "backbone.c" + std::to_string(i);
    p.add_conv(base + ".w", c, c, 3, 3);
    p.add_zeros(base + ".b", {c});
  }
  for (const char* lvl : {"p3", "p4", "p5"}) {
    p.add_conv(std::string("neck.") + lvl + ".w", c, c, 1, 1);
    p.add_zeros(std::string("neck.") + lvl + ".b", {c});
  }
  for (const char* tower : {"cls", "reg"}) {
    for (int i = 1; i <= 2; ++i) {
      const std::string base = std::string("head.") + tower + std::to_string(i);
      p.add_conv(base + ".w", c, c, 3, 3);
      p.add_zeros(base + ".b", {c});
    }
  }
  p.add_conv("head.cls_out.w", cfg.num_classes, c, 1, 1);
  p.add_zeros("head.cls_out.b", {cfg.num_classes});
  p.add_conv("head.reg_box.w", 4, c, 1, 1);
  p.add_zeros("head.reg_box.b", {4});
  p.add_conv("head.reg_obj.w", 1, c, 1, 1);
  p.add_zeros("head.reg_obj.b", {1});
  // Video object branch: two 3x3 convs, then a split head.
  p.add_conv("vob.c1.w", c, c, 3, 3);
  p.add_zeros("vob.c1.b", {c});
  p.add_conv("vob.c2.w", c, c, 3, 3);
  p.add_zeros("vob.c2.b", {c});
  p.add_conv("vob.cls.w", c, c, 1, 1);
  p.add_zeros("vob.cls.b", {c});
  p.add_conv("vob.ins.w", c, c, 1, 1);
  p.add_zeros("vob.ins.b", {c});
}

namespace {

Tensor conv_block(const Tensor& x, const Parameters& p, const std::string& base, int padding) {
  return relu(conv2d(x, p.get(base + ".w"), p.get(base + ".b"), padding));
}

}  // namespace

DetectorOutput detector_forward(const Tensor& frame, const Parameters& p, const ModelConfig& cfg,
                                bool with_video_branch) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw std::invalid_argument("detector_forward: frame must be [3,H,W]");
  }
  const int h = frame.dim(1), w = frame.dim(2);
  if (h % 32 != 0 || w % 32 != 0) {
    throw std::invalid_argument("detector_forward: H and W must be divisible by 32");
  }

  Tensor x = avgpool2x2(conv_block(frame, p, "backbone.c1", 1));
  x = avgpool2x2(conv_block(x, p, "backbone.c2", 1));
  Tensor b3 = avgpool2x2(conv_block(x, p, "backbone.c3", 1));
  Tensor b4 = avgpool2x2(conv_block(b3, p, "backbone.c4", 1));
  Tensor b5 = avgpool2x2(conv_block(b4, p, "backbone.c5", 1));

  DetectorOutput out;
  out.image_h = h;
  out.image_w = w;
  const Tensor* bases[3] = {&b3, &b4, &b5};
  const char* neck_names[3] = {"neck.p3", "neck.p4", "neck.p5"};
  for (int li = 0; li < 3; ++li) {
    LevelOutput lo;
    lo.neck.level = static_cast<Level>(li);
    lo.neck.stride = level_stride(lo.neck.level);
    lo.neck.tensor = conv_block(*bases[li], p, neck_names[li], 0);

    Tensor cls = conv_block(lo.neck.tensor, p, "head.cls1", 1);
    cls = conv_block(cls, p, "head.cls2", 1);
    lo.raw.class_logits = conv2d(cls, p.get("head.cls_out.w"), p.get("head.cls_out.b"), 0);

    Tensor reg = conv_block(lo.neck.tensor, p, "head.reg1", 1);
    reg = conv_block(reg, p, "head.reg2", 1);
    lo.raw.box_offsets = softplus(conv2d(reg, p.get("head.reg_box.w"), p.get("head.reg_box.b"), 0));
    lo.raw.objectness = conv2d(reg, p.get("head.reg_obj.w"), p.get("head.reg_obj.b"), 0);

    if (with_video_branch) {
      Tensor v = conv_block(lo.neck.tensor, p, "vob.c1", 1);
      v = conv_block(v, p, "vob.c2", 1);
      lo.vob.f_cls = conv2d(v, p.get("vob.cls.w"), p.get("vob.cls.b"), 0);
      lo.vob.f_ins_input = conv2d(v, p.get("vob.ins.w"), p.get("vob.ins.b"), 0);
    }
    out.levels.push_back(std::move(lo));
  }
  return out;
}

std::vector<Candidate> decode(const RawPrediction& raw, int stride, int image_h, int image_w) {
  const int num_classes = raw.class_logits.dim(0);
  const int h = raw.class_logits.dim(1), w = raw.class_logits.dim(2);
  const float* cls = raw.class_logits.data();
  const float* off = raw.box_offsets.data();
  const float* obj = raw.objectness.data();
  auto sig = [](float v) { return 1.0f / (1.0f + std::exp(-v)); };

  int level = stride == 8 ? 0 : stride == 16 ? 1 : 2;
  std::vector<Candidate> cands;
  cands.reserve(static_cast<size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int64_t cell = static_cast<int64_t>(r) * w + c;
      const float cx = (c + 0.5f) * stride;
      const float cy = (r + 0.5f) * stride;
      Candidate cand;
      cand.level = level;
      cand.cell_r = r;
      cand.cell_c = c;
      const float l = off[cell], t = off[static_cast<int64_t>(h) * w + cell];
      const float rr = off[2 * static_cast<int64_t>(h) * w + cell];
      const float b = off[3 * static_cast<int64_t>(h) * w + cell];
      cand.box.x1 = std::clamp(cx - l * stride, 0.0f, static_cast<float>(image_w));
      cand.box.y1 = std::clamp(cy - t * stride, 0.0f, static_cast<float>(image_h));
      cand.box.x2 = std::clamp(cx + rr * stride, 0.0f, static_cast<float>(image_w));
      cand.box.y2 = std::clamp(cy + b * stride, 0.0f, static_cast<float>(image_h));
      const float po = sig(obj[cell]);
      cand.class_scores.resize(num_classes);
      for (int k = 0; k < num_classes; ++k) {
        cand.class_scores[k] = po * sig(cls[static_cast<int64_t>(k) * h * w + cell]);
        if (cand.class_scores[k] > cand.score) {
          cand.score = cand.class_scores[k];
          cand.class_id = k;
        }
      }
      cands.push_back(std::move(cand));
    }
  }
  return cands;
}

std::vector<PositiveCell> assign_positives(const std::vector<GtObject>& gts,
                                           const std::vector<std::array<int, 2>>& level_dims,
                                           const std::vector<int>& strides) {
  std::vector<PositiveCell> positives;
  for (size_t li = 0; li < level_dims.size(); ++li) {
    const int h = level_dims[li][0], w = level_dims[li][1];
    const int s = strides[li];
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const float cx = (c + 0.5f) * s;
        const float cy = (r + 0.5f) * s;
        int best = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
          const Box& bx = gts[g].box;
          const float size = std::sqrt(bx.area());
          const int target_level = size < 24.0f ? 0 : size < 48.0f ? 1 : 2;
          if (target_level != static_cast<int>(li)) continue;
          if (cx < bx.x1 || cx >= bx.x2 || cy < bx.y1 || cy >= bx.y2) continue;
          if (best < 0 || bx.area() < gts[best].box.area()) best = static_cast<int>(g);
        }
        if (best >= 0) {
          positives.push_back({static_cast<int>(li), r, c, best});
        }
      }
    }
  }
  return positives;
}

Tensor detection_loss(const DetectorOutput& out, const std::vector<GtObject>& gts,
                      const ModelConfig& cfg) {
  std::vector<std::array<int, 2>> dims;
  std::vector<int> strides;
  for (const LevelOutput& lo : out.levels) {
    dims.push_back({lo.raw.objectness.dim(1), lo.raw.objectness.dim(2)});
    strides.push_back(lo.neck.stride);
  }
  const std::vector<PositiveCell> positives = assign_positives(gts, dims, strides);
  const double num_fg = static_cast<double>(std::max<size_t>(1, positives.size()));

  // Objectness: BCE summed over every cell of every level, normalized by the
  // positive count (YOLOX-style sum/num_fg keeps the foreground signal from
  // being drowned by the negatives).
  std::vector<Tensor> obj_logits, obj_targets;
  int total_cells = 0;
  for (size_t li = 0; li < out.levels.size(); ++li) {
    const RawPrediction& raw = out.levels[li].raw;
    const int n = dims[li][0] * dims[li][1];
    total_cells += n;
    obj_logits.push_back(reshape(raw.objectness, {n, 1}));
    std::vector<float> tgt(static_cast<size_t>(n), 0.0f);
    for (const PositiveCell& pc : positives) {
      if (pc.level == static_cast<int>(li)) tgt[static_cast<size_t>(pc.cell_r) * dims[li][1] + pc.cell_c] = 1.0f;
    }
    obj_targets.push_back(Tensor::from_data({n, 1}, std::move(tgt)));
  }
  Tensor loss = scale(bce_with_logits_mean(concat_rows(obj_logits), concat_rows(obj_targets)),
                      static_cast<double>(total_cells) / num_fg);

  if (!positives.empty()) {
    // Classification: BCE over the class logits of positive cells.
    std::vector<Tensor> cls_slices, cls_targets;
    std::vector<Tensor> iou_terms;
    for (const PositiveCell& pc : positives) {
      const LevelOutput& lo = out.levels[static_cast<size_t>(pc.level)];
      const int h = dims[static_cast<size_t>(pc.level)][0];
      const int w = dims[static_cast<size_t>(pc.level)][1];
      const int64_t cell = static_cast<int64_t>(pc.cell_r) * w + pc.cell_c;
      std::vector<int64_t> idx(static_cast<size_t>(cfg.num_classes));
      for (int k = 0; k < cfg.num_classes; ++k) idx[static_cast<size_t>(k)] = static_cast<int64_t>(k) * h * w + cell;
      cls_slices.push_back(gather_elements(lo.raw.class_logits, idx));
      std::vector<float> one_hot(static_cast<size_t>(cfg.num_classes), 0.0f);
      one_hot[static_cast<size_t>(gts[static_cast<size_t>(pc.gt_index)].class_id)] = 1.0f;
      cls_targets.push_back(Tensor::from_data({cfg.num_classes}, std::move(one_hot)));

      // IoU between the decoded box (kept on the tape) and the GT box.
      const int s = strides[static_cast<size_t>(pc.level)];
      const double cx = (pc.cell_c + 0.5) * s;
      const double cy = (pc.cell_r + 0.5) * s;
      const int64_t plane = static_cast<int64_t>(h) * w;
      Tensor l = gather_elements(lo.raw.box_offsets, {cell});
      Tensor t = gather_elements(lo.raw.box_offsets, {plane + cell});
      Tensor r = gather_elements(lo.raw.box_offsets, {2 * plane + cell});
      Tensor b = gather_elements(lo.raw.box_offsets, {3 * plane + cell});
      Tensor px1 = add_scalar(scale(l, -s), cx);
      Tensor py1 = add_scalar(scale(t, -s), cy);
      Tensor px2 = add_scalar(scale(r, s), cx);
      Tensor py2 = add_scalar(scale(b, s), cy);
      const Box& gb = gts[static_cast<size_t>(pc.gt_index)].box;
      Tensor iw = relu(sub(min_t(px2, Tensor::scalar(gb.x2)), max_t(px1, Tensor::scalar(gb.x1))));
      Tensor ih = relu(sub(min_t(py2, Tensor::scalar(gb.y2)), max_t(py1, Tensor::scalar(gb.y1))));
      Tensor inter = mul(iw, ih);
      Tensor area_p = mul(sub(px2, px1), sub(py2, py1));
      Tensor uni = sub(add_scalar(area_p, gb.area()), inter);
      iou_terms.push_back(add_scalar(neg(div(inter, uni)), 1.0));
    }
    // Flatten [num_classes] slices into rows for one BCE call.
    std::vector<Tensor> rows2;
    for (Tensor& t : cls_slices) rows2.push_back(reshape(t, {1, cfg.num_classes}));
    std::vector<Tensor> trows;
    for (Tensor& t : cls_targets) trows.push_back(reshape(t, {1, cfg.num_classes}));
    Tensor cls_loss = scale(bce_with_logits_mean(concat_rows(rows2), concat_rows(trows)),
                            static_cast<double>(positives.size() * static_cast<size_t>(cfg.num_classes)) / num_fg);
    Tensor iou_loss = scale(add_n(iou_terms), 1.0 / num_fg);
    loss = add(loss, add(cls_loss, iou_loss));
  }
  return loss;
}

}  // namespace faim
