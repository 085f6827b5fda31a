#include "faim/verify.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <stdexcept>

#include "faim/dataset.hpp"
#include "faim/eval.hpp"
#include "faim/flops.hpp"
#include "faim/gradcheck.hpp"
#include "faim/ops.hpp"
#include "faim/pipeline.hpp"
#include "faim/rng.hpp"
#include "faim/train.hpp"

namespace faim {

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kGradSeeds = 5;

Tensor rand_tensor(Shape shape, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Rng rng(seed);
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// Fixed random projection makes the objective sensitive everywhere; scaled
// to O(1) so f32 forward rounding stays below the finite-difference signal.
Tensor weighted_sum(const Tensor& x, uint64_t seed) {
  Tensor w = rand_tensor(x.shape(), seed, 0.2f, 1.0f);
  return scale(sum(mul(x, w)), 1.0 / static_cast<double>(x.numel()));
}

// Finite differences straddle ReLU kinks when a pre-activation sits within
// epsilon of zero; composite checks therefore evaluate at a point with
// positive-margin activations (small weights, positive biases).
void temper_params(Parameters& p, float weight_scale, float bias_value) {
  for (const std::string& name : p.names()) {
    Tensor& t = p.get(name);
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0) {
      for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] *= weight_scale;
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
      for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = bias_value;
    }
  }
}

using CheckFn = std::function<void(std::string&)>;  // throws or appends detail

CheckResult run_one(const std::string& name, const CheckFn& fn) {
  CheckResult r;
  r.name = name;
  try {
    std::string detail;
    fn(detail);
    r.pass = true;
    r.detail = detail;
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = e.what();
  }
  return r;
}

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------- gradients

void check_grad_max(double err, std::string& detail) {
  detail = "max rel err " + fmt(err);
  expect(err < kGradTol, "gradient error " + fmt(err) + " >= 1e-4");
}

void grad_conv2d(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Tensor x = rand_tensor({2, 4, 4}, 100 + s);
    Tensor k = rand_tensor({3, 2, 3, 3}, 200 + s);
    Tensor b = rand_tensor({3}, 300 + s);
    auto f = [](std::vector<Tensor>& in) { return weighted_sum(conv2d(in[0], in[1], in[2], 1), 7); };
    worst = std::max(worst, grad_check(f, {x, k, b}));
    // composed conv -> softmax -> sum on a 1x4x4 input
    Tensor x2 = rand_tensor({1, 4, 4}, 400 + s);
    Tensor k2 = rand_tensor({2, 1, 3, 3}, 500 + s);
    Tensor b2 = rand_tensor({2}, 600 + s);
    auto g = [](std::vector<Tensor>& in) {
      Tensor y = conv2d(in[0], in[1], in[2], 1);
      return weighted_sum(softmax(reshape(y, {2, 16})), 11);
    };
    worst = std::max(worst, grad_check(g, {x2, k2, b2}));
  }
  check_grad_max(worst, detail);
}

void grad_linear(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Tensor x = rand_tensor({3, 4}, 110 + s);
    Tensor w = rand_tensor({5, 4}, 210 + s);
    Tensor b = rand_tensor({5}, 310 + s);
    auto f = [](std::vector<Tensor>& in) { return weighted_sum(linear(in[0], in[1], in[2]), 13); };
    worst = std::max(worst, grad_check(f, {x, w, b}));
  }
  check_grad_max(worst, detail);
}

void grad_softmax(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Tensor x = rand_tensor({3, 5}, 120 + s, -2.0f, 2.0f);
    auto f = [](std::vector<Tensor>& in) { return weighted_sum(softmax(in[0]), 17); };
    worst = std::max(worst, grad_check(f, {x}));
  }
  check_grad_max(worst, detail);
}

void grad_attention(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Parameters p(777 + static_cast<uint64_t>(s));
    const int d = 8;
    for (const char* m : {"wq", "wk", "wv", "wo"}) p.add_linear(std::string("a.") + m, d, d);
    for (const char* v : {"bq", "bk", "bv", "bo"}) p.add_zeros(std::string("a.") + v, {d});
    Tensor q = rand_tensor({4, d}, 130 + s);
    Tensor k = rand_tensor({5, d}, 230 + s);
    Tensor v = rand_tensor({5, d}, 330 + s);
    auto f = [&p](std::vector<Tensor>& in) {
      return weighted_sum(multi_head_attention(in[0], in[1], in[2], p, "a", 2), 19);
    };
    worst = std::max(worst, grad_check(f, {q, k, v, p.get("a.wq"), p.get("a.wv"), p.get("a.wo"),
                                           p.get("a.bo")}));
  }
  check_grad_max(worst, detail);
}

void grad_bilinear(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Tensor x = rand_tensor({2, 3, 4}, 140 + s);
    auto f = [](std::vector<Tensor>& in) { return weighted_sum(bilinear_resize(in[0], 5, 7), 23); };
    worst = std::max(worst, grad_check(f, {x}));
  }
  check_grad_max(worst, detail);
}

void grad_roi_align(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Tensor fmap = rand_tensor({2, 6, 6}, 150 + s);
    const Box roi{0.7f, 1.2f, 4.5f, 5.1f};
    auto f = [&roi](std::vector<Tensor>& in) {
      return weighted_sum(roi_align(in[0], roi, 3, 3, 2), 29);
    };
    worst = std::max(worst, grad_check(f, {fmap}));
  }
  check_grad_max(worst, detail);
}

void grad_ifem(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    ModelConfig cfg;
    cfg.channels = 3;
    cfg.c_prime = 2;
    Parameters p(900 + static_cast<uint64_t>(s));
    add_ifem_params(p, cfg);
    Tensor v = rand_tensor({3, 5, 5}, 160 + s);
    auto f = [&p](std::vector<Tensor>& in) {
      return weighted_sum(ifem_extract(in[0], p, Level::P3).tensor, 31);
    };
    worst = std::max(worst, grad_check(f, {v, p.get("ifem.w"), p.get("ifem.b")}));
  }
  check_grad_max(worst, detail);
}

void grad_mask_head(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.channels = 2;
    cfg.c_prime = 2;
    cfg.mask_channels = 2;
    cfg.roi_size = 6;
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      const uint64_t salt = static_cast<uint64_t>(s) * 100 + attempt;
      Parameters p(910 + salt);
      add_maskhead_params(p, cfg);
      temper_params(p, 0.25f, 0.6f);
      Tensor pooled = rand_tensor({1, 2, 6, 6}, 170 + salt, 0.0f, 0.5f);
      double margin = 1e300;
      {
        KinkMarginScope km(&margin);
        predict_masks(pooled, p, cfg);
      }
      if (margin < 0.05) continue;  // FD step would straddle a ReLU kink
      found = true;
      auto f = [&p, &cfg](std::vector<Tensor>& in) {
        return weighted_sum(predict_masks(in[0], p, cfg).logits, 37);
      };
      worst = std::max(worst, grad_check(f, {pooled, p.get("mask.c1.w"), p.get("mask.out.w"),
                                             p.get("mask.out.b")}));
    }
    expect(found, "no kink-free evaluation point found for the mask head");
  }
  check_grad_max(worst, detail);
}

void grad_ticam(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.channels = 4;
    cfg.feature_dim = 8;
    cfg.heads = 2;
    Parameters p(920 + static_cast<uint64_t>(s));
    add_ticam_params(p, cfg);
    QueryBank bank;
    bank.q_cls = rand_tensor({4, 8}, 180 + s);
    bank.q_ins = rand_tensor({4, 8}, 280 + s);
    for (int i = 0; i < 4; ++i) bank.origin.emplace_back(0, i);
    bank.m_frames = 1;
    auto f = [&p, &bank](std::vector<Tensor>& in) {
      QueryBank b2 = bank;
      b2.q_cls = in[0];
      b2.q_ins = in[1];
      return weighted_sum(ticam_aggregate(b2, p, 2).class_logits, 41);
    };
    worst = std::max(worst, grad_check(f, {bank.q_cls, bank.q_ins, p.get("ticam.fuse.w"),
                                           p.get("ticam.head.w"), p.get("ticam.attn_ins.wv")}));
  }
  check_grad_max(worst, detail);
}

void grad_detection_loss(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.channels = 4;
    std::vector<GtObject> gts{{Box{6, 8, 20, 22}, 1}, {Box{18, 2, 30, 14}, 2}};
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      const uint64_t salt = static_cast<uint64_t>(s) * 100 + attempt;
      Parameters p(930 + salt);
      add_detector_params(p, cfg);
      temper_params(p, 0.5f, 0.25f);
      Tensor frame = rand_tensor({3, 32, 32}, 190 + salt, 0.0f, 1.0f);
      // Forward once outside the margin scope: only the loss-level kinks
      // (IoU min/max/clamp) matter for the perturbed final-layer tensors.
      DetectorOutput probe = detector_forward(frame, p, cfg, false);
      double margin = 1e300;
      {
        KinkMarginScope km(&margin);
        detection_loss(probe, gts, cfg);
      }
      if (margin < 0.05) continue;
      found = true;
      auto f = [&](std::vector<Tensor>& in) {
        (void)in;
        DetectorOutput out = detector_forward(frame, p, cfg, false);
        return detection_loss(out, gts, cfg);
      };
      worst = std::max(worst, grad_check(f, {p.get("head.reg_box.w"), p.get("head.reg_box.b"),
                                             p.get("head.cls_out.w"), p.get("head.cls_out.b"),
                                             p.get("head.reg_obj.w"), p.get("head.reg_obj.b")}));
    }
    expect(found, "no kink-free evaluation point found for the detection loss");
  }
  check_grad_max(worst, detail);
}

void grad_mask_loss(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Tensor logits = rand_tensor({5, 6}, 195 + s, -2.0f, 2.0f);
    BinaryMask target(5, 6);
    Rng rng(555 + static_cast<uint64_t>(s));
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) target.set(y, x, rng.bernoulli(0.5));
    auto f = [&target](std::vector<Tensor>& in) {
      std::vector<MaskPair> pairs{{in[0], target}};
      return mask_loss(pairs, MaskLossKind::Bce);
    };
    worst = std::max(worst, grad_check(f, {logits}));
    auto g = [&target](std::vector<Tensor>& in) {
      std::vector<MaskPair> pairs{{in[0], target}};
      return mask_loss(pairs, MaskLossKind::Dice);
    };
    worst = std::max(worst, grad_check(g, {logits}));
  }
  check_grad_max(worst, detail);
}

// ------------------------------------------------------------------ oracles

std::vector<int> nms_oracle(const std::vector<ScoredBox>& boxes, float thr) {
  // Direct transcription of the greedy definition.
  std::vector<int> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return boxes[static_cast<size_t>(a)].score != boxes[static_cast<size_t>(b)].score
               ? boxes[static_cast<size_t>(a)].score > boxes[static_cast<size_t>(b)].score
               : a < b;
  });
  std::vector<char> alive(boxes.size(), 1);
  std::vector<int> kept;
  for (int idx : order) {
    if (!alive[static_cast<size_t>(idx)]) continue;
    kept.push_back(idx);
    for (int other : order) {
      if (other == idx || !alive[static_cast<size_t>(other)]) continue;
      if (iou(boxes[static_cast<size_t>(idx)].box, boxes[static_cast<size_t>(other)].box) > thr) {
        alive[static_cast<size_t>(other)] = 0;
      }
    }
  }
  return kept;
}

void oracle_nms(std::string& detail) {
  Rng rng(4242);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + rng.next_int(50);
    std::vector<ScoredBox> boxes;
    for (int i = 0; i < n; ++i) {
      const float x1 = rng.uniform(0, 80), y1 = rng.uniform(0, 80);
      const float w = rng.uniform(2, 30), h = rng.uniform(2, 30);
      // Quantized scores exercise the tie-break.
      const float score = 0.05f * static_cast<float>(rng.next_int(20));
      boxes.push_back({Box{x1, y1, x1 + w, y1 + h}, score});
    }
    const float thr = 0.1f + 0.8f * static_cast<float>(rng.next_double());
    expect(nms(boxes, thr) == nms_oracle(boxes, thr),
           "nms mismatch vs oracle at trial " + std::to_string(trial));
  }
  detail = "1000 random cases exact";
}

void oracle_attention_naive(std::string& detail) {
  double worst = 0;
  for (int s = 0; s < 5; ++s) {
    const int nq = 4, nk = 4, d = 8, heads = 2, dh = d / heads;
    Parameters p(660 + static_cast<uint64_t>(s));
    for (const char* m : {"wq", "wk", "wv", "wo"}) p.add_linear(std::string("a.") + m, d, d);
    for (const char* v : {"bq", "bk", "bv", "bo"}) p.add_zeros(std::string("a.") + v, {d});
    Tensor q = rand_tensor({nq, d}, 700 + s);
    Tensor k = rand_tensor({nk, d}, 800 + s);
    Tensor v = rand_tensor({nk, d}, 900 + s);
    Tensor out = multi_head_attention(q, k, v, p, "a", heads);

    // Naive per-head loop in double precision.
    auto project = [&](const Tensor& x, const char* w, const char* b) {
      std::vector<std::vector<double>> y(static_cast<size_t>(x.dim(0)),
                                         std::vector<double>(d, 0.0));
      const Tensor& wt = p.get(std::string("a.") + w);
      const Tensor& bt = p.get(std::string("a.") + b);
      for (int r = 0; r < x.dim(0); ++r)
        for (int o = 0; o < d; ++o) {
          double acc = bt.data()[o];
          for (int i = 0; i < d; ++i) {
            acc += static_cast<double>(x.data()[r * d + i]) * wt.data()[o * d + i];
          }
          y[static_cast<size_t>(r)][static_cast<size_t>(o)] = acc;
        }
      return y;
    };
    auto qp = project(q, "wq", "bq"), kp = project(k, "wk", "bk"), vp = project(v, "wv", "bv");
    std::vector<std::vector<double>> concat(nq, std::vector<double>(d, 0.0));
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < nq; ++i) {
        std::vector<double> scores(nk);
        double mx = -1e300;
        for (int j = 0; j < nk; ++j) {
          double dot = 0;
          for (int t = 0; t < dh; ++t) dot += qp[i][h * dh + t] * kp[j][h * dh + t];
          scores[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, scores[static_cast<size_t>(j)]);
        }
        double denom = 0;
        for (double& sc : scores) {
          sc = std::exp(sc - mx);
          denom += sc;
        }
        for (int t = 0; t < dh; ++t) {
          double acc = 0;
          for (int j = 0; j < nk; ++j) acc += scores[static_cast<size_t>(j)] / denom * vp[j][h * dh + t];
          concat[static_cast<size_t>(i)][static_cast<size_t>(h * dh + t)] = acc;
        }
      }
    }
    const Tensor& wo = p.get("a.wo");
    const Tensor& bo = p.get("a.bo");
    for (int i = 0; i < nq; ++i)
      for (int o = 0; o < d; ++o) {
        double acc = bo.data()[o];
        for (int t = 0; t < d; ++t) acc += concat[static_cast<size_t>(i)][static_cast<size_t>(t)] * wo.data()[o * d + t];
        worst = std::max(worst, std::fabs(acc - out.data()[i * d + o]));
      }
  }
  detail = "max abs diff " + fmt(worst);
  expect(worst < 1e-5, "attention differs from naive oracle by " + fmt(worst));
}

void oracle_roi(std::string& detail) {
  // Constant-map exactness.
  Tensor cmap = Tensor::full({2, 5, 5}, 3.25f);
  Tensor out = roi_align(cmap, Box{0.3f, 0.6f, 4.2f, 4.9f}, 3, 3, 2);
  for (int64_t i = 0; i < out.numel(); ++i) {
    expect(out.data()[i] == 3.25f, "roi_align not exact on a constant map");
  }
  // Linearity.
  Tensor fmap = rand_tensor({2, 6, 6}, 808);
  Tensor scaled = scale(fmap, 2.5);
  Tensor a = roi_align(fmap, Box{0.5f, 0.5f, 5.0f, 5.5f}, 4, 4, 2);
  Tensor b = roi_align(scaled, Box{0.5f, 0.5f, 5.0f, 5.5f}, 4, 4, 2);
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::fabs(2.5 * a.data()[i] - b.data()[i]));
  }
  expect(worst < 1e-6, "roi_align linearity violated by " + fmt(worst));
  // Whole-map roi with one sample per bin equals dense per-bin-center bilinear.
  Tensor whole = roi_align(fmap, Box{0, 0, 6, 6}, 4, 4, 1);
  double worst2 = 0;
  for (int ch = 0; ch < 2; ++ch)
    for (int by = 0; by < 4; ++by)
      for (int bx = 0; bx < 4; ++bx) {
        const double y = (by + 0.5) * 6.0 / 4.0, x = (bx + 0.5) * 6.0 / 4.0;
        const double v = std::min(std::max(y - 0.5, 0.0), 5.0);
        const double u = std::min(std::max(x - 0.5, 0.0), 5.0);
        const int r0 = static_cast<int>(std::floor(v)), c0 = static_cast<int>(std::floor(u));
        const int r1 = std::min(r0 + 1, 5), c1 = std::min(c0 + 1, 5);
        const double fy = v - r0, fx = u - c0;
        const float* ip = fmap.data() + ch * 36;
        const double ref = (1 - fy) * ((1 - fx) * ip[r0 * 6 + c0] + fx * ip[r0 * 6 + c1]) +
                           fy * ((1 - fx) * ip[r1 * 6 + c0] + fx * ip[r1 * 6 + c1]);
        worst2 = std::max(worst2, std::fabs(ref - whole.data()[(ch * 4 + by) * 4 + bx]));
      }
  expect(worst2 < 1e-5, "roi_align differs from dense bilinear oracle by " + fmt(worst2));
  detail = "constant exact, linearity " + fmt(worst) + ", dense oracle " + fmt(worst2);
}

double ap_oracle(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, double thr) {
  // Independent transcription: score-ordered greedy matching, then the
  // area under the precision envelope.
  std::vector<size_t> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].score != dets[b].score ? dets[a].score > dets[b].score : a < b;
  });
  std::vector<char> used(gts.size(), 0);
  std::vector<char> tp;
  for (size_t oi : order) {
    int best = -1;
    double best_iou = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].frame_id != dets[oi].frame_id) continue;
      const double v = iou(dets[oi].box, gts[g].box);
      if (v >= thr && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[static_cast<size_t>(best)] = 1;
      tp.push_back(1);
    } else {
      tp.push_back(0);
    }
  }
  if (gts.empty()) return 0.0;
  double ap = 0, prev_r = 0;
  int tps = 0;
  for (size_t i = 0; i < tp.size(); ++i) {
    if (!tp[i]) continue;
    ++tps;
    const double r = static_cast<double>(tps) / gts.size();
    // precision envelope at this recall: best precision at rank >= i
    double pmax = 0;
    int t2 = 0;
    for (size_t j = 0; j < tp.size(); ++j) {
      if (tp[j]) ++t2;
      if (j >= i) pmax = std::max(pmax, static_cast<double>(t2) / static_cast<double>(j + 1));
    }
    ap += (r - prev_r) * pmax;
    prev_r = r;
  }
  return ap;
}

void oracle_ap(std::string& detail) {
  Rng rng(31337);
  for (int scene = 0; scene < 500; ++scene) {
    std::vector<GtBox> gts;
    std::vector<Detection> dets;
    const int ngt = 1 + rng.next_int(6);
    for (int g = 0; g < ngt; ++g) {
      const float x1 = rng.uniform(0, 60), y1 = rng.uniform(0, 60);
      gts.push_back({rng.next_int(3), Box{x1, y1, x1 + rng.uniform(4, 24), y1 + rng.uniform(4, 24)},
                     0, -1});
    }
    const int nd = rng.next_int(13);
    for (int d = 0; d < nd; ++d) {
      Box base = gts[static_cast<size_t>(rng.next_int(ngt))].box;
      const float jx = rng.uniform(-6, 6), jy = rng.uniform(-6, 6);
      Box b{base.x1 + jx, base.y1 + jy, base.x2 + jx + rng.uniform(-3, 3),
            base.y2 + jy + rng.uniform(-3, 3)};
      if (!b.valid()) continue;
      dets.push_back({rng.next_int(3), b, 0, 0.1f * static_cast<float>(rng.next_int(10))});
    }
    const double thr = 0.3 + 0.4 * rng.next_double();
    const double got = average_precision(dets, gts, thr);
    const double want = ap_oracle(dets, gts, thr);
    expect(got == want, "AP mismatch vs oracle in scene " + std::to_string(scene) + ": " +
                            fmt(got) + " vs " + fmt(want));
  }
  detail = "500 random scenes exact";
}

void oracle_filter(std::string& detail) {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + rng.next_int(4), c = 2 + rng.next_int(4), hw = 3;
    Tensor logits = rand_tensor({n, c, hw, hw}, 5000 + trial);
    std::vector<int> t;
    for (int i = 0; i < n; ++i) t.push_back(rng.next_int(c));
    MaskTensor mt(logits);
    FilteredMasks fm = filter_by_class(mt, t);
    for (int i = 0; i < n; ++i)
      for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
          const float want = logits.data()[((static_cast<int64_t>(i) * c + t[static_cast<size_t>(i)]) * hw + y) * hw + x];
          expect(fm.masks[static_cast<size_t>(i)].data()[y * hw + x] == want,
                 "filter_by_class differs from direct gather");
        }
  }
  detail = "index-gather oracle exact";
}

// -------------------------------------------------------------- hand values

void hand_values(std::string& detail) {
  // AP example: 2 GTs, ranked detections TP(0.9), FP(0.8), TP(0.7) -> 5/6.
  std::vector<GtBox> gts{{0, Box{0, 0, 10, 10}, 0, -1}, {0, Box{30, 30, 40, 40}, 0, -1}};
  std::vector<Detection> dets{{0, Box{0, 0, 10, 10}, 0, 0.9f},
                              {0, Box{60, 60, 70, 70}, 0, 0.8f},
                              {0, Box{30, 30, 40, 40}, 0, 0.7f}};
  const double ap = average_precision(dets, gts, 0.5);
  expect(std::fabs(ap - 5.0 / 6.0) < 1e-9, "AP example != 5/6 (got " + fmt(ap) + ")");

  // BCE at p = 0.5 is ln 2.
  Tensor logits = Tensor::zeros({3, 3});
  Tensor targets = rand_tensor({3, 3}, 1234, 0.0f, 1.0f);
  for (int64_t i = 0; i < targets.numel(); ++i) {
    targets.data()[i] = targets.data()[i] > 0.5f ? 1.0f : 0.0f;
  }
  const double bce = bce_with_logits_mean(logits, targets).scalar64();
  expect(std::fabs(bce - std::log(2.0)) < 1e-6, "BCE at p=0.5 != ln 2 (got " + fmt(bce) + ")");

  // IoU of [0,0,2,2] and [1,1,3,3] is 1/7.
  const double v = iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3});
  expect(std::fabs(v - 1.0 / 7.0) < 1e-9, "IoU example != 1/7 (got " + fmt(v) + ")");

  // Cosine schedule endpoints are exact, midpoint is the average.
  TrainConfig tc;
  tc.base_lr = 0.04;
  tc.min_lr = 0.004;
  tc.warmup_iters = 10;
  tc.total_iters = 110;
  expect(cosine_lr(10, tc) == tc.base_lr, "cosine_lr(warmup) != base_lr");
  expect(cosine_lr(110, tc) == tc.min_lr, "cosine_lr(total) != min_lr");
  expect(std::fabs(cosine_lr(60, tc) - 0.5 * (tc.base_lr + tc.min_lr)) < 1e-12,
         "cosine_lr midpoint != (base+min)/2");

  // Total loss identity with the default lambda of 1.
  LossBreakdown lb = total_loss(1.0, 0.5);
  expect(lb.lambda == 1.0 && lb.l_total == 1.5, "total_loss(1.0,0.5) != 1.5 at default lambda");
  Rng rng(5150);
  for (int i = 0; i < 100; ++i) {
    const double ld = rng.next_double() * 3, lm = rng.next_double() * 3,
                 lam = rng.next_double() * 2;
    LossBreakdown b = total_loss(ld, lm, lam);
    expect(b.l_total == ld + lam * lm, "l_total identity violated");
  }
  detail = "AP 5/6, BCE ln2, IoU 1/7, schedule endpoints, loss identity";
}

// ------------------------------------------------------------------ buckets

void bucket_boundaries(std::string& detail) {
  expect(motion_speed_of({0.95f}) == MotionSpeed::Slow, "0.95 must be Slow");
  expect(motion_speed_of({0.9f}) == MotionSpeed::Medium, "0.9 must be Medium");
  expect(motion_speed_of({0.7f}) == MotionSpeed::Medium, "0.7 must be Medium");
  expect(motion_speed_of({0.5f}) == MotionSpeed::Fast, "0.5 must be Fast");
  expect(motion_speed_of({0.8f, 1.0f}) == MotionSpeed::Medium, "mean 0.9 must be Medium");
  bool threw = false;
  try {
    motion_speed_of({});
  } catch (const std::exception&) {
    threw = true;
  }
  expect(threw, "empty IoU sequence must throw");
  detail = "boundary inputs 0.9 and 0.7 bucket Medium";
}

// ------------------------------------------------------------------- purity

std::vector<Tensor> tiny_clip_frames(int n, uint64_t seed) {
  std::vector<Tensor> frames;
  for (int t = 0; t < n; ++t) frames.push_back(rand_tensor({3, 64, 64}, seed + static_cast<uint64_t>(t), 0.0f, 1.0f));
  return frames;
}

void inference_purity(std::string& detail) {
  ModelConfig cfg;
  RuntimeConfig rt;
  rt.n_cap = 8;
  rt.m_infer = 4;
  std::vector<Tensor> frames = tiny_clip_frames(4, 0xABCD);

  Pipeline with_mask = build_pipeline(cfg, 77, true);
  const int64_t before = MaskTensor::constructed_count();
  FlopCounts counts_with;
  {
    FlopScope scope(&counts_with);
    infer_clip(with_mask, frames, rt);
  }
  const int64_t after = MaskTensor::constructed_count();
  expect(after == before, "inference constructed " + std::to_string(after - before) +
                              " MaskTensor instances");

  Pipeline without_mask = build_pipeline(cfg, 77, false);
  FlopCounts counts_without;
  {
    FlopScope scope(&counts_without);
    infer_clip(without_mask, frames, rt);
  }
  expect(counts_with.total_flops() == counts_without.total_flops(),
         "inference FLOPs differ with/without the mask branch");
  detail = "0 MaskTensor constructions; FLOPs equal (" +
           std::to_string(counts_with.total_flops()) + ")";
}

// --------------------------------------------------------------- complexity

void attention_quadratic(std::string& detail) {
  ModelConfig cfg;
  cfg.feature_dim = 64;
  Parameters p(31);
  add_ticam_params(p, cfg);
  auto run = [&](int rows) {
    QueryBank bank;
    bank.q_cls = rand_tensor({rows, 64}, 1000 + rows);
    bank.q_ins = rand_tensor({rows, 64}, 2000 + rows);
    for (int i = 0; i < rows; ++i) bank.origin.emplace_back(0, i);
    bank.m_frames = 1;
    FlopCounts counts;
    {
      FlopScope scope(&counts);
      ticam_aggregate(bank, p, cfg.heads);
    }
    return counts.attn_score_macs;
  };
  // Fixed m, doubled n_cap -> doubled rows -> exactly 4x the score MACs.
  const uint64_t base = run(60);
  const uint64_t doubled = run(120);
  expect(doubled == 4 * base, "attention score MACs scaled x" +
                                  std::to_string(static_cast<double>(doubled) / base) +
                                  ", expected exactly x4");
  detail = "score MACs " + std::to_string(base) + " -> " + std::to_string(doubled) + " (x4)";
}

// -------------------------------------------------------------- determinism

void determinism_finetune(std::string& detail) {
  GenerateSpec gs;
  gs.train_clips = 4;
  gs.val_clips = 1;
  gs.frames_per_clip = 4;
  gs.min_objects = 1;
  gs.max_objects = 2;
  gs.degradation.blur_prob = 0.3f;
  gs.degradation.occlusion_prob = 0.3f;
  gs.degradation.defocus_strength = 0.5f;
  gs.seed = 99;
  gs.threads = 1;
  Dataset ds = generate_dataset(gs);

  auto run_once = [&]() {
    ModelConfig mc;
    mc.channels = 8;
    mc.mask_channels = 4;
    mc.roi_size = 8;
    mc.mask_level = Level::P3;
    Pipeline pipe = build_pipeline(mc, 2024);
    TrainConfig tc;
    tc.total_iters = 10;
    tc.warmup_iters = 2;
    tc.m = 3;
    tc.seed = 2024;
    tc.mask_train_cap = 3;
    RuntimeConfig rt;
    rt.n_cap = 6;
    rt.m_train = 3;
    return fit(pipe, ds, TrainPhase::Finetune, tc, rt, "").metrics_csv;
  };
  const std::string a = run_once();
  const std::string b = run_once();
  expect(!a.empty() && a == b, "two identical finetune runs produced different loss logs");
  detail = std::to_string(a.size()) + "-byte logs bit-identical";
}

}  // namespace

std::vector<std::string> check_groups() {
  return {"grad", "oracle", "hand", "buckets", "purity", "complexity", "determinism"};
}

std::vector<CheckResult> run_check_group(const std::string& group) {
  std::vector<CheckResult> out;
  if (group == "grad") {
    out.push_back(run_one("grad/conv2d", grad_conv2d));
    out.push_back(run_one("grad/linear", grad_linear));
    out.push_back(run_one("grad/softmax", grad_softmax));
    out.push_back(run_one("grad/attention", grad_attention));
    out.push_back(run_one("grad/bilinear_resize", grad_bilinear));
    out.push_back(run_one("grad/roi_align", grad_roi_align));
    out.push_back(run_one("grad/ifem", grad_ifem));
    out.push_back(run_one("grad/mask_head", grad_mask_head));
    out.push_back(run_one("grad/ticam", grad_ticam));
    out.push_back(run_one("grad/detection_loss", grad_detection_loss));
    out.push_back(run_one("grad/mask_loss", grad_mask_loss));
  } else if (group == "oracle") {
    out.push_back(run_one("oracle/nms_brute_force", oracle_nms));
    out.push_back(run_one("oracle/attention_naive_loop", oracle_attention_naive));
    out.push_back(run_one("oracle/roi_align", oracle_roi));
    out.push_back(run_one("oracle/average_precision", oracle_ap));
    out.push_back(run_one("oracle/filter_by_class", oracle_filter));
  } else if (group == "hand") {
    out.push_back(run_one("hand/frozen_values", hand_values));
  } else if (group == "buckets") {
    out.push_back(run_one("buckets/boundaries", bucket_boundaries));
  } else if (group == "purity") {
    out.push_back(run_one("purity/inference_path", inference_purity));
  } else if (group == "complexity") {
    out.push_back(run_one("complexity/attention_quadratic", attention_quadratic));
  } else if (group == "determinism") {
    out.push_back(run_one("determinism/finetune_logs", determinism_finetune));
  } else {
    throw std::invalid_argument("unknown check group '" + group + "'");
  }
  return out;
}

std::vector<CheckResult> run_all_checks() {
  std::vector<CheckResult> out;
  for (const std::string& group : check_groups()) {
    std::vector<CheckResult> results = run_check_group(group);
    out.insert(out.end(), results.begin(), results.end());
  }
  return out;
}

}  // namespace faim
