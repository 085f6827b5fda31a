#include "faim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "faim/flops.hpp"
#include "faim/params.hpp"

namespace faim {

namespace {

thread_local double* g_kink_margin = nullptr;

void note_kink(double distance) {
  if (g_kink_margin && distance < *g_kink_margin) *g_kink_margin = distance;
}

constexpr double kProbClamp = 1e-7;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void count_elementwise(int64_t n) {
  if (FlopCounts* fc = current_flops()) fc->elementwise += static_cast<uint64_t>(n);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

void maybe_set_scalar64(Tensor& out, double v) {
  if (out.numel() == 1) out.impl()->scalar64 = v;
}

#ifdef FAIM_CHECK_FINITE
void debug_finite(const Tensor& t, const char* op) { check_finite(t.vec(), op); }
#else
void debug_finite(const Tensor&, const char*) {}
#endif

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_op_output(a.shape(), {&a, &b});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, a.scalar64() + b.scalar64());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, n]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bi->grad[i] += o->grad[i];
      }
    };
  }
  debug_finite(out, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_op_output(a.shape(), {&a, &b});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, a.scalar64() - b.scalar64());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, n]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bi->grad[i] -= o->grad[i];
      }
    };
  }
  debug_finite(out, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_op_output(a.shape(), {&a, &b});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, a.scalar64() * b.scalar64());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, n]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bi->grad[i] += o->grad[i] * ai->data[i];
      }
    };
  }
  debug_finite(out, "mul");
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out = make_op_output(a.shape(), {&a, &b});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, a.scalar64() / b.scalar64());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, n]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i] / bi->data[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          double bv = bi->data[i];
          bi->grad[i] -= o->grad[i] * ai->data[i] / (bv * bv);
        }
      }
    };
  }
  debug_finite(out, "div");
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = make_op_output(a.shape(), {&a});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = static_cast<float>(a.data()[i] * s);
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, a.scalar64() * s);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    out.impl()->backward = [o, ai, n, s]() {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i] * s;
    };
  }
  debug_finite(out, "scale");
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = make_op_output(a.shape(), {&a});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = static_cast<float>(a.data()[i] + s);
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, a.scalar64() + s);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    out.impl()->backward = [o, ai, n]() {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) ai->grad[i] += o->grad[i];
    };
  }
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  Tensor out = make_op_output(a.shape(), {&a});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    note_kink(std::fabs(static_cast<double>(a.data()[i])));
    out.data()[i] = a.data()[i] > 0.0f ? a.data()[i] : 0.0f;
  }
  count_elementwise(n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    out.impl()->backward = [o, ai, n]() {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        if (ai->data[i] > 0.0f) ai->grad[i] += o->grad[i];
      }
    };
  }
  return out;
}

Tensor sigmoid_t(const Tensor& a) {
  Tensor out = make_op_output(a.shape(), {&a});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    out.data()[i] = static_cast<float>(stable_sigmoid(a.data()[i]));
  }
  count_elementwise(n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    out.impl()->backward = [o, ai, n]() {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        double y = o->data[i];
        ai->grad[i] += o->grad[i] * y * (1.0 - y);
      }
    };
  }
  return out;
}

Tensor softplus(const Tensor& a) {
  Tensor out = make_op_output(a.shape(), {&a});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    double x = a.data()[i];
    double y = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    out.data()[i] = static_cast<float>(y);
  }
  count_elementwise(n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    out.impl()->backward = [o, ai, n]() {
      ai->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        ai->grad[i] += o->grad[i] * stable_sigmoid(ai->data[i]);
      }
    };
  }
  return out;
}

Tensor min_t(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "min_t");
  Tensor out = make_op_output(a.shape(), {&a, &b});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    note_kink(std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]));
    out.data()[i] = std::min(a.data()[i], b.data()[i]);
  }
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, std::min(a.scalar64(), b.scalar64()));
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, n]() {
      for (int64_t i = 0; i < n; ++i) {
        bool a_wins = ai->data[i] <= bi->data[i];
        TensorImpl* w = a_wins ? ai : bi;
        if (w->requires_grad) {
          w->ensure_grad();
          w->grad[i] += o->grad[i];
        }
      }
    };
  }
  return out;
}

Tensor max_t(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_t");
  Tensor out = make_op_output(a.shape(), {&a, &b});
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    note_kink(std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]));
    out.data()[i] = std::max(a.data()[i], b.data()[i]);
  }
  count_elementwise(n);
  if (n == 1) maybe_set_scalar64(out, std::max(a.scalar64(), b.scalar64()));
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, n]() {
      for (int64_t i = 0; i < n; ++i) {
        bool a_wins = ai->data[i] >= bi->data[i];
        TensorImpl* w = a_wins ? ai : bi;
        if (w->requires_grad) {
          w->ensure_grad();
          w->grad[i] += o->grad[i];
        }
      }
    };
  }
  return out;
}

Tensor add_n(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "add_n: empty input");
  std::vector<const Tensor*> parents;
  parents.reserve(xs.size());
  for (const Tensor& x : xs) {
    require_same_shape(xs[0], x, "add_n");
    parents.push_back(&x);
  }
  Tensor out = make_op_output(xs[0].shape(), parents);
  const int64_t n = out.numel();
  if (n == 1) {
    double acc = 0.0;
    for (const Tensor& x : xs) acc += x.scalar64();
    out.data()[0] = static_cast<float>(acc);
    maybe_set_scalar64(out, acc);
  } else {
    for (const Tensor& x : xs) {
      for (int64_t i = 0; i < n; ++i) out.data()[i] += x.data()[i];
    }
  }
  count_elementwise(n * static_cast<int64_t>(xs.size()));
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    std::vector<TensorImpl*> ps;
    for (const Tensor& x : xs) ps.push_back(x.impl().get());
    out.impl()->backward = [o, ps, n]() {
      for (TensorImpl* p : ps) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (int64_t i = 0; i < n; ++i) p->grad[i] += o->grad[i];
      }
    };
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required");
  require(a.dim(1) == b.dim(0), "matmul: inner dimension mismatch");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_op_output({m, n}, {&a, &b});
  if (FlopCounts* fc = current_flops()) {
    fc->matmul_macs += static_cast<uint64_t>(m) * k * n;
  }
  std::vector<double> acc(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a.data() + static_cast<int64_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      const float* brow = b.data() + static_cast<int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* orow = out.data() + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, m, k, n]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (int i = 0; i < m; ++i) {
          const double* grow = o->grad.data() + static_cast<int64_t>(i) * n;
          double* garow = ai->grad.data() + static_cast<int64_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const float* brow = bi->data.data() + static_cast<int64_t>(kk) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
            garow[kk] += s;
          }
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int kk = 0; kk < k; ++kk) {
          double* gbrow = bi->grad.data() + static_cast<int64_t>(kk) * n;
          for (int i = 0; i < m; ++i) {
            double av = ai->data[static_cast<int64_t>(i) * k + kk];
            const double* grow = o->grad.data() + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  }
  debug_finite(out, "matmul");
  return out;
}

Tensor transpose2d(const Tensor& a) {
  require(a.rank() == 2, "transpose2d: rank-2 tensor required");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = make_op_output({n, m}, {&a});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<int64_t>(j) * m + i] = a.data()[static_cast<int64_t>(i) * n + j];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    out.impl()->backward = [o, ai, m, n]() {
      ai->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ai->grad[static_cast<int64_t>(i) * n + j] += o->grad[static_cast<int64_t>(j) * m + i];
    };
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(weight.rank() == 2, "linear: weight must be [Dout,Din]");
  const int dout = weight.dim(0), din = weight.dim(1);
  require(bias.rank() == 1 && bias.dim(0) == dout, "linear: bias must be [Dout]");
  require(input.rank() == 1 || input.rank() == 2, "linear: input rank must be 1 or 2");
  const int last = input.dim(input.rank() - 1);
  if (last != din) throw std::invalid_argument("linear: input last dim != Din");
  const int rows = input.rank() == 1 ? 1 : input.dim(0);

  Shape out_shape = input.rank() == 1 ? Shape{dout} : Shape{rows, dout};
  Tensor out = make_op_output(out_shape, {&input, &weight, &bias});
  if (FlopCounts* fc = current_flops()) {
    fc->linear_macs += static_cast<uint64_t>(rows) * dout * din;
  }
  for (int r = 0; r < rows; ++r) {
    const float* x = input.data() + static_cast<int64_t>(r) * din;
    float* y = out.data() + static_cast<int64_t>(r) * dout;
    for (int o = 0; o < dout; ++o) {
      const float* w = weight.data() + static_cast<int64_t>(o) * din;
      double acc = bias.data()[o];
      for (int i = 0; i < din; ++i) acc += static_cast<double>(x[i]) * w[i];
      y[o] = static_cast<float>(acc);
    }
  }
  if (out.requires_grad()) {
    TensorImpl* on = out.impl().get();
    TensorImpl* xi = input.impl().get();
    TensorImpl* wi = weight.impl().get();
    TensorImpl* bi = bias.impl().get();
    out.impl()->backward = [on, xi, wi, bi, rows, dout, din]() {
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const double* g = on->grad.data() + static_cast<int64_t>(r) * dout;
          double* gx = xi->grad.data() + static_cast<int64_t>(r) * din;
          for (int o = 0; o < dout; ++o) {
            const float* w = wi->data.data() + static_cast<int64_t>(o) * din;
            double gv = g[o];
            for (int i = 0; i < din; ++i) gx[i] += gv * w[i];
          }
        }
      }
      if (wi->requires_grad) {
        wi->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const double* g = on->grad.data() + static_cast<int64_t>(r) * dout;
          const float* x = xi->data.data() + static_cast<int64_t>(r) * din;
          for (int o = 0; o < dout; ++o) {
            double* gw = wi->grad.data() + static_cast<int64_t>(o) * din;
            double gv = g[o];
            for (int i = 0; i < din; ++i) gw[i] += gv * x[i];
          }
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const double* g = on->grad.data() + static_cast<int64_t>(r) * dout;
          for (int o = 0; o < dout; ++o) bi->grad[o] += g[o];
        }
      }
    };
  }
  debug_finite(out, "linear");
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding) {
  require(input.rank() == 3, "conv2d: input must be [Cin,H,W]");
  require(kernel.rank() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw]");
  require(bias.rank() == 1, "conv2d: bias must be [Cout]");
  require(padding >= 0, "conv2d: padding must be >= 0");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) throw std::invalid_argument("conv2d: kernel Cin mismatch");
  if (bias.dim(0) != cout) throw std::invalid_argument("conv2d: bias Cout mismatch");
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel dims must be odd");
  const int oh = h + 2 * padding - kh + 1;
  const int ow = w + 2 * padding - kw + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");

  const int hp = h + 2 * padding, wp = w + 2 * padding;
  std::vector<float> padded(static_cast<size_t>(cin) * hp * wp, 0.0f);
  for (int c = 0; c < cin; ++c)
    for (int y = 0; y < h; ++y) {
      const float* src = input.data() + (static_cast<int64_t>(c) * h + y) * w;
      float* dst = padded.data() + (static_cast<int64_t>(c) * hp + y + padding) * wp + padding;
      std::copy(src, src + w, dst);
    }

  Tensor out = make_op_output({cout, oh, ow}, {&input, &kernel, &bias});
  if (FlopCounts* fc = current_flops()) {
    fc->conv_macs += static_cast<uint64_t>(cout) * oh * ow * cin * kh * kw;
  }
  for (int co = 0; co < cout; ++co) {
    float* oplane = out.data() + static_cast<int64_t>(co) * oh * ow;
    std::fill(oplane, oplane + static_cast<int64_t>(oh) * ow, bias.data()[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const float* iplane = padded.data() + static_cast<int64_t>(ci) * hp * wp;
      const float* kbase = kernel.data() + (static_cast<int64_t>(co) * cin + ci) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const float kv = kbase[ky * kw + kx];
          if (kv == 0.0f) continue;
          for (int y = 0; y < oh; ++y) {
            const float* irow = iplane + static_cast<int64_t>(y + ky) * wp + kx;
            float* orow = oplane + static_cast<int64_t>(y) * ow;
            for (int x = 0; x < ow; ++x) orow[x] += kv * irow[x];
          }
        }
      }
    }
  }

  if (out.requires_grad()) {
    TensorImpl* on = out.impl().get();
    TensorImpl* xi = input.impl().get();
    TensorImpl* ki = kernel.impl().get();
    TensorImpl* bi = bias.impl().get();
    // The padded forward buffer is captured for the weight gradient.
    auto xp = std::make_shared<std::vector<float>>(std::move(padded));
    out.impl()->backward = [on, xi, ki, bi, xp, cin, h, w, cout, kh, kw, oh, ow, hp, wp,
                            padding]() {
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int co = 0; co < cout; ++co) {
          const double* g = on->grad.data() + static_cast<int64_t>(co) * oh * ow;
          double s = 0.0;
          for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) s += g[i];
          bi->grad[co] += s;
        }
      }
      if (ki->requires_grad) {
        ki->ensure_grad();
        for (int co = 0; co < cout; ++co) {
          const double* gplane = on->grad.data() + static_cast<int64_t>(co) * oh * ow;
          for (int ci = 0; ci < cin; ++ci) {
            const float* iplane = xp->data() + static_cast<int64_t>(ci) * hp * wp;
            double* gk = ki->grad.data() + (static_cast<int64_t>(co) * cin + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                double s = 0.0;
                for (int y = 0; y < oh; ++y) {
                  const float* irow = iplane + static_cast<int64_t>(y + ky) * wp + kx;
                  const double* grow = gplane + static_cast<int64_t>(y) * ow;
                  for (int x = 0; x < ow; ++x) s += grow[x] * irow[x];
                }
                gk[ky * kw + kx] += s;
              }
            }
          }
        }
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        std::vector<double> gpad(static_cast<size_t>(cin) * hp * wp, 0.0);
        for (int co = 0; co < cout; ++co) {
          const double* gplane = on->grad.data() + static_cast<int64_t>(co) * oh * ow;
          for (int ci = 0; ci < cin; ++ci) {
            double* gp = gpad.data() + static_cast<int64_t>(ci) * hp * wp;
            const float* kbase = ki->data.data() + (static_cast<int64_t>(co) * cin + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const double kv = kbase[ky * kw + kx];
                if (kv == 0.0) continue;
                for (int y = 0; y < oh; ++y) {
                  const double* grow = gplane + static_cast<int64_t>(y) * ow;
                  double* prow = gp + static_cast<int64_t>(y + ky) * wp + kx;
                  for (int x = 0; x < ow; ++x) prow[x] += kv * grow[x];
                }
              }
            }
          }
        }
        for (int ci = 0; ci < cin; ++ci)
          for (int y = 0; y < h; ++y) {
            const double* src =
                gpad.data() + (static_cast<int64_t>(ci) * hp + y + padding) * wp + padding;
            double* dst = xi->grad.data() + (static_cast<int64_t>(ci) * h + y) * w;
            for (int x = 0; x < w; ++x) dst[x] += src[x];
          }
      }
    };
  }
  debug_finite(out, "conv2d");
  return out;
}

Tensor softmax(const Tensor& input) {
  require(input.rank() >= 1, "softmax: rank >= 1 required");
  const int d = input.dim(input.rank() - 1);
  require(d >= 1, "softmax: last dim must be >= 1");
  const int64_t rows = input.numel() / d;
  Tensor out = make_op_output(input.shape(), {&input});
  if (FlopCounts* fc = current_flops()) fc->softmax_elems += static_cast<uint64_t>(input.numel());
  std::vector<double> e(static_cast<size_t>(d));
  for (int64_t r = 0; r < rows; ++r) {
    const float* x = input.data() + r * d;
    float* y = out.data() + r * d;
    double m = x[0];
    for (int i = 1; i < d; ++i) m = std::max(m, static_cast<double>(x[i]));
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      e[i] = std::exp(static_cast<double>(x[i]) - m);
      s += e[i];
    }
    for (int i = 0; i < d; ++i) y[i] = static_cast<float>(e[i] / s);
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = input.impl().get();
    out.impl()->backward = [o, xi, rows, d]() {
      xi->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const float* y = o->data.data() + r * d;
        const double* g = o->grad.data() + r * d;
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += static_cast<double>(y[i]) * g[i];
        double* gx = xi->grad.data() + r * d;
        for (int i = 0; i < d; ++i) gx[i] += static_cast<double>(y[i]) * (g[i] - dot);
      }
    };
  }
  return out;
}

Tensor avgpool2x2(const Tensor& input) {
  require(input.rank() == 3, "avgpool2x2: input must be [C,H,W]");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "avgpool2x2: H and W must be even");
  const int oh = h / 2, ow = w / 2;
  Tensor out = make_op_output({c, oh, ow}, {&input});
  if (FlopCounts* fc = current_flops()) fc->pool_elems += static_cast<uint64_t>(out.numel()) * 4;
  for (int ch = 0; ch < c; ++ch) {
    const float* ip = input.data() + static_cast<int64_t>(ch) * h * w;
    float* op = out.data() + static_cast<int64_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const float* p = ip + static_cast<int64_t>(2 * y) * w + 2 * x;
        op[static_cast<int64_t>(y) * ow + x] = 0.25f * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = input.impl().get();
    out.impl()->backward = [o, xi, c, h, w, oh, ow]() {
      xi->ensure_grad();
      for (int ch = 0; ch < c; ++ch) {
        const double* gp = o->grad.data() + static_cast<int64_t>(ch) * oh * ow;
        double* gx = xi->grad.data() + static_cast<int64_t>(ch) * h * w;
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            double gv = 0.25 * gp[static_cast<int64_t>(y) * ow + x];
            double* p = gx + static_cast<int64_t>(2 * y) * w + 2 * x;
            p[0] += gv;
            p[1] += gv;
            p[w] += gv;
            p[w + 1] += gv;
          }
      }
    };
  }
  return out;
}

namespace {
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> f;  // weight of i1
};

LerpAxis make_axis(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.f.resize(out);
  const double s = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * s - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
    int lo = static_cast<int>(std::floor(src));
    ax.i0[i] = lo;
    ax.i1[i] = std::min(lo + 1, in - 1);
    ax.f[i] = src - lo;
  }
  return ax;
}
}  // namespace

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
  require(input.rank() == 3, "bilinear_resize: input must be [C,H,W]");
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: output dims must be >= 1");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const LerpAxis ay = make_axis(h, out_h);
  const LerpAxis ax = make_axis(w, out_w);
  Tensor out = make_op_output({c, out_h, out_w}, {&input});
  if (FlopCounts* fc = current_flops()) {
    fc->bilinear_samples += static_cast<uint64_t>(out.numel());
  }
  for (int ch = 0; ch < c; ++ch) {
    const float* ip = input.data() + static_cast<int64_t>(ch) * h * w;
    float* op = out.data() + static_cast<int64_t>(ch) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const float* r0 = ip + static_cast<int64_t>(ay.i0[y]) * w;
      const float* r1 = ip + static_cast<int64_t>(ay.i1[y]) * w;
      const double fy = ay.f[y];
      for (int x = 0; x < out_w; ++x) {
        const double fx = ax.f[x];
        double top = (1.0 - fx) * r0[ax.i0[x]] + fx * r0[ax.i1[x]];
        double bot = (1.0 - fx) * r1[ax.i0[x]] + fx * r1[ax.i1[x]];
        op[static_cast<int64_t>(y) * out_w + x] = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = input.impl().get();
    out.impl()->backward = [o, xi, c, h, w, out_h, out_w, ay, ax]() {
      xi->ensure_grad();
      for (int ch = 0; ch < c; ++ch) {
        const double* gp = o->grad.data() + static_cast<int64_t>(ch) * out_h * out_w;
        double* gx = xi->grad.data() + static_cast<int64_t>(ch) * h * w;
        for (int y = 0; y < out_h; ++y) {
          const double fy = ay.f[y];
          double* g0 = gx + static_cast<int64_t>(ay.i0[y]) * w;
          double* g1 = gx + static_cast<int64_t>(ay.i1[y]) * w;
          for (int x = 0; x < out_w; ++x) {
            const double fx = ax.f[x];
            const double gv = gp[static_cast<int64_t>(y) * out_w + x];
            g0[ax.i0[x]] += gv * (1.0 - fy) * (1.0 - fx);
            g0[ax.i1[x]] += gv * (1.0 - fy) * fx;
            g1[ax.i0[x]] += gv * fy * (1.0 - fx);
            g1[ax.i1[x]] += gv * fy * fx;
          }
        }
      }
    };
  }
  return out;
}

Tensor sum(const Tensor& input) {
  Tensor out = make_op_output({1}, {&input});
  double acc = 0.0;
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) acc += input.data()[i];
  out.data()[0] = static_cast<float>(acc);
  out.impl()->scalar64 = acc;
  count_elementwise(n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = input.impl().get();
    out.impl()->backward = [o, xi, n]() {
      xi->ensure_grad();
      const double g = o->grad[0];
      for (int64_t i = 0; i < n; ++i) xi->grad[i] += g;
    };
  }
  return out;
}

Tensor mean(const Tensor& input) {
  require(input.numel() > 0, "mean: empty tensor");
  Tensor out = make_op_output({1}, {&input});
  double acc = 0.0;
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) acc += input.data()[i];
  acc /= static_cast<double>(n);
  out.data()[0] = static_cast<float>(acc);
  out.impl()->scalar64 = acc;
  count_elementwise(n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = input.impl().get();
    out.impl()->backward = [o, xi, n]() {
      xi->ensure_grad();
      const double g = o->grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) xi->grad[i] += g;
    };
  }
  return out;
}

Tensor reshape(const Tensor& input, Shape shape) {
  require(shape_numel(shape) == input.numel(), "reshape: element count mismatch");
  Tensor out = make_op_output(shape, {&input});
  std::copy(input.data(), input.data() + input.numel(), out.data());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = input.impl().get();
    const int64_t n = input.numel();
    out.impl()->backward = [o, xi, n]() {
      xi->ensure_grad();
      for (int64_t i = 0; i < n; ++i) xi->grad[i] += o->grad[i];
    };
  }
  return out;
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "concat_lastdim: rank-2 tensors required");
  require(a.dim(0) == b.dim(0), "concat_lastdim: row count mismatch");
  const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor out = make_op_output({n, da + db}, {&a, &b});
  for (int r = 0; r < n; ++r) {
    std::copy(a.data() + static_cast<int64_t>(r) * da, a.data() + static_cast<int64_t>(r + 1) * da,
              out.data() + static_cast<int64_t>(r) * (da + db));
    std::copy(b.data() + static_cast<int64_t>(r) * db, b.data() + static_cast<int64_t>(r + 1) * db,
              out.data() + static_cast<int64_t>(r) * (da + db) + da);
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    out.impl()->backward = [o, ai, bi, n, da, db]() {
      for (int r = 0; r < n; ++r) {
        const double* g = o->grad.data() + static_cast<int64_t>(r) * (da + db);
        if (ai->requires_grad) {
          ai->ensure_grad();
          double* ga = ai->grad.data() + static_cast<int64_t>(r) * da;
          for (int i = 0; i < da; ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          double* gb = bi->grad.data() + static_cast<int64_t>(r) * db;
          for (int i = 0; i < db; ++i) gb[i] += g[da + i];
        }
      }
    };
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_rows: empty input");
  const int d = xs[0].dim(1);
  int total = 0;
  std::vector<const Tensor*> parents;
  for (const Tensor& x : xs) {
    require(x.rank() == 2 && x.dim(1) == d, "concat_rows: column mismatch");
    total += x.dim(0);
    parents.push_back(&x);
  }
  Tensor out = make_op_output({total, d}, parents);
  int64_t off = 0;
  for (const Tensor& x : xs) {
    std::copy(x.data(), x.data() + x.numel(), out.data() + off);
    off += x.numel();
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    std::vector<TensorImpl*> ps;
    for (const Tensor& x : xs) ps.push_back(x.impl().get());
    out.impl()->backward = [o, ps]() {
      int64_t off = 0;
      for (TensorImpl* p : ps) {
        const int64_t n = p->numel();
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t i = 0; i < n; ++i) p->grad[i] += o->grad[off + i];
        }
        off += n;
      }
    };
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "stack_rows: empty input");
  const int d = xs[0].dim(0);
  std::vector<const Tensor*> parents;
  for (const Tensor& x : xs) {
    require(x.rank() == 1 && x.dim(0) == d, "stack_rows: length mismatch");
    parents.push_back(&x);
  }
  Tensor out = make_op_output({static_cast<int>(xs.size()), d}, parents);
  for (size_t r = 0; r < xs.size(); ++r)
    std::copy(xs[r].data(), xs[r].data() + d, out.data() + static_cast<int64_t>(r) * d);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    std::vector<TensorImpl*> ps;
    for (const Tensor& x : xs) ps.push_back(x.impl().get());
    out.impl()->backward = [o, ps, d]() {
      for (size_t r = 0; r < ps.size(); ++r) {
        TensorImpl* p = ps[r];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        const double* g = o->grad.data() + static_cast<int64_t>(r) * d;
        for (int i = 0; i < d; ++i) p->grad[i] += g[i];
      }
    };
  }
  return out;
}

Tensor stack_first(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "stack_first: empty input");
  const Shape inner = xs[0].shape();
  std::vector<const Tensor*> parents;
  for (const Tensor& x : xs) {
    require(x.shape() == inner, "stack_first: shape mismatch");
    parents.push_back(&x);
  }
  Shape out_shape;
  out_shape.push_back(static_cast<int>(xs.size()));
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  Tensor out = make_op_output(out_shape, parents);
  const int64_t chunk = xs[0].numel();
  for (size_t r = 0; r < xs.size(); ++r)
    std::copy(xs[r].data(), xs[r].data() + chunk, out.data() + static_cast<int64_t>(r) * chunk);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    std::vector<TensorImpl*> ps;
    for (const Tensor& x : xs) ps.push_back(x.impl().get());
    out.impl()->backward = [o, ps, chunk]() {
      for (size_t r = 0; r < ps.size(); ++r) {
        TensorImpl* p = ps[r];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        const double* g = o->grad.data() + static_cast<int64_t>(r) * chunk;
        for (int64_t i = 0; i < chunk; ++i) p->grad[i] += g[i];
      }
    };
  }
  return out;
}

Tensor slice_first(const Tensor& x, int i) {
  require(x.rank() >= 2, "slice_first: rank >= 2 required");
  require(i >= 0 && i < x.dim(0), "slice_first: index out of range");
  Shape inner(x.shape().begin() + 1, x.shape().end());
  const int64_t chunk = shape_numel(inner);
  Tensor out = make_op_output(inner, {&x});
  std::copy(x.data() + static_cast<int64_t>(i) * chunk,
            x.data() + static_cast<int64_t>(i + 1) * chunk, out.data());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = x.impl().get();
    out.impl()->backward = [o, xi, i, chunk]() {
      xi->ensure_grad();
      double* gx = xi->grad.data() + static_cast<int64_t>(i) * chunk;
      for (int64_t k = 0; k < chunk; ++k) gx[k] += o->grad[k];
    };
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  require(x.rank() == 2, "gather_rows: rank-2 tensor required");
  const int n = x.dim(0), d = x.dim(1);
  for (int i : idx) require(i >= 0 && i < n, "gather_rows: index out of range");
  Tensor out = make_op_output({static_cast<int>(idx.size()), d}, {&x});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(x.data() + static_cast<int64_t>(idx[r]) * d,
              x.data() + static_cast<int64_t>(idx[r] + 1) * d,
              out.data() + static_cast<int64_t>(r) * d);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = x.impl().get();
    out.impl()->backward = [o, xi, idx, d]() {
      xi->ensure_grad();
      for (size_t r = 0; r < idx.size(); ++r) {
        const double* g = o->grad.data() + static_cast<int64_t>(r) * d;
        double* gx = xi->grad.data() + static_cast<int64_t>(idx[r]) * d;
        for (int i = 0; i < d; ++i) gx[i] += g[i];
      }
    };
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  require(x.rank() == 2, "slice_cols: rank-2 tensor required");
  const int n = x.dim(0), d = x.dim(1);
  require(start >= 0 && len >= 1 && start + len <= d, "slice_cols: bad range");
  Tensor out = make_op_output({n, len}, {&x});
  for (int r = 0; r < n; ++r)
    std::copy(x.data() + static_cast<int64_t>(r) * d + start,
              x.data() + static_cast<int64_t>(r) * d + start + len,
              out.data() + static_cast<int64_t>(r) * len);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = x.impl().get();
    out.impl()->backward = [o, xi, n, d, start, len]() {
      xi->ensure_grad();
      for (int r = 0; r < n; ++r) {
        const double* g = o->grad.data() + static_cast<int64_t>(r) * len;
        double* gx = xi->grad.data() + static_cast<int64_t>(r) * d + start;
        for (int i = 0; i < len; ++i) gx[i] += g[i];
      }
    };
  }
  return out;
}

Tensor row(const Tensor& x, int r) {
  require(x.rank() == 2, "row: rank-2 tensor required");
  require(r >= 0 && r < x.dim(0), "row: index out of range");
  const int d = x.dim(1);
  Tensor out = make_op_output({d}, {&x});
  std::copy(x.data() + static_cast<int64_t>(r) * d, x.data() + static_cast<int64_t>(r + 1) * d,
            out.data());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = x.impl().get();
    out.impl()->backward = [o, xi, r, d]() {
      xi->ensure_grad();
      double* gx = xi->grad.data() + static_cast<int64_t>(r) * d;
      for (int i = 0; i < d; ++i) gx[i] += o->grad[i];
    };
  }
  return out;
}

Tensor gather_cell(const Tensor& x, int r, int c) {
  require(x.rank() == 3, "gather_cell: [C,H,W] tensor required");
  const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(r >= 0 && r < h && c >= 0 && c < w, "gather_cell: cell out of range");
  Tensor out = make_op_output({ch}, {&x});
  for (int k = 0; k < ch; ++k)
    out.data()[k] = x.data()[(static_cast<int64_t>(k) * h + r) * w + c];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = x.impl().get();
    out.impl()->backward = [o, xi, ch, h, w, r, c]() {
      xi->ensure_grad();
      for (int k = 0; k < ch; ++k)
        xi->grad[(static_cast<int64_t>(k) * h + r) * w + c] += o->grad[k];
    };
  }
  return out;
}

Tensor slice_channel(const Tensor& x, int n, int c) {
  require(x.rank() == 4, "slice_channel: [N,C,H,W] tensor required");
  const int N = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(n >= 0 && n < N, "slice_channel: batch index out of range");
  require(c >= 0 && c < C, "slice_channel: channel index out of range");
  Tensor out = make_op_output({h, w}, {&x});
  const int64_t base = (static_cast<int64_t>(n) * C + c) * h * w;
  std::copy(x.data() + base, x.data() + base + static_cast<int64_t>(h) * w, out.data());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = x.impl().get();
    out.impl()->backward = [o, xi, base, h, w]() {
      xi->ensure_grad();
      for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) xi->grad[base + i] += o->grad[i];
    };
  }
  return out;
}

Tensor gather_elements(const Tensor& x, const std::vector<int64_t>& flat) {
  for (int64_t i : flat) require(i >= 0 && i < x.numel(), "gather_elements: index out of range");
  Tensor out = make_op_output({static_cast<int>(flat.size())}, {&x});
  for (size_t k = 0; k < flat.size(); ++k) out.data()[k] = x.data()[flat[k]];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* xi = x.impl().get();
    out.impl()->backward = [o, xi, flat]() {
      xi->ensure_grad();
      for (size_t k = 0; k < flat.size(); ++k) xi->grad[flat[k]] += o->grad[k];
    };
  }
  return out;
}

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits_mean");
  require(!targets.requires_grad(), "bce_with_logits_mean: targets must be constant");
  require(logits.numel() > 0, "bce_with_logits_mean: empty input");
  Tensor out = make_op_output({1}, {&logits, &targets});
  const int64_t n = logits.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double p = stable_sigmoid(logits.data()[i]);
    p = std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
    double y = targets.data()[i];
    acc += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  acc /= static_cast<double>(n);
  out.data()[0] = static_cast<float>(acc);
  out.impl()->scalar64 = acc;
  count_elementwise(4 * n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* zi = logits.impl().get();
    TensorImpl* ti = targets.impl().get();
    out.impl()->backward = [o, zi, ti, n]() {
      zi->ensure_grad();
      const double g = o->grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) {
        double p = stable_sigmoid(zi->data[i]);
        if (p <= kProbClamp || p >= 1.0 - kProbClamp) continue;  // clamped region
        zi->grad[i] += g * (p - ti->data[i]);
      }
    };
  }
  return out;
}

Tensor dice_loss(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "dice_loss");
  require(!targets.requires_grad(), "dice_loss: targets must be constant");
  Tensor out = make_op_output({1}, {&logits, &targets});
  const int64_t n = logits.numel();
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double p = stable_sigmoid(logits.data()[i]);
    double y = targets.data()[i];
    inter += p * y;
    psum += p;
    tsum += y;
  }
  const double smooth = 1.0;
  const double a = 2.0 * inter + smooth;
  const double b = psum + tsum + smooth;
  const double loss = 1.0 - a / b;
  out.data()[0] = static_cast<float>(loss);
  out.impl()->scalar64 = loss;
  count_elementwise(4 * n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* zi = logits.impl().get();
    TensorImpl* ti = targets.impl().get();
    out.impl()->backward = [o, zi, ti, n, a, b]() {
      zi->ensure_grad();
      const double g = o->grad[0];
      for (int64_t i = 0; i < n; ++i) {
        double p = stable_sigmoid(zi->data[i]);
        double y = ti->data[i];
        double dl_dp = -(2.0 * y * b - a) / (b * b);
        zi->grad[i] += g * dl_dp * p * (1.0 - p);
      }
    };
  }
  return out;
}

Tensor softmax_xent_mean(const Tensor& logits, const Tensor& targets) {
  require(logits.rank() == 2, "softmax_xent_mean: logits must be [N,C]");
  require_same_shape(logits, targets, "softmax_xent_mean");
  require(!targets.requires_grad(), "softmax_xent_mean: targets must be constant");
  const int n = logits.dim(0), c = logits.dim(1);
  require(n >= 1, "softmax_xent_mean: empty batch");
  Tensor out = make_op_output({1}, {&logits, &targets});
  double acc = 0.0;
  for (int r = 0; r < n; ++r) {
    const float* z = logits.data() + static_cast<int64_t>(r) * c;
    const float* t = targets.data() + static_cast<int64_t>(r) * c;
    double m = z[0];
    for (int i = 1; i < c; ++i) m = std::max(m, static_cast<double>(z[i]));
    double lse = 0.0;
    for (int i = 0; i < c; ++i) lse += std::exp(static_cast<double>(z[i]) - m);
    lse = m + std::log(lse);
    double row = 0.0;
    for (int i = 0; i < c; ++i) row += static_cast<double>(t[i]) * (lse - z[i]);
    acc += row;
  }
  acc /= static_cast<double>(n);
  out.data()[0] = static_cast<float>(acc);
  out.impl()->scalar64 = acc;
  count_elementwise(static_cast<int64_t>(n) * c * 4);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl().get();
    TensorImpl* zi = logits.impl().get();
    TensorImpl* ti = targets.impl().get();
    out.impl()->backward = [o, zi, ti, n, c]() {
      zi->ensure_grad();
      const double g = o->grad[0] / static_cast<double>(n);
      for (int r = 0; r < n; ++r) {
        const float* z = zi->data.data() + static_cast<int64_t>(r) * c;
        const float* t = ti->data.data() + static_cast<int64_t>(r) * c;
        double m = z[0];
        for (int i = 1; i < c; ++i) m = std::max(m, static_cast<double>(z[i]));
        double denom = 0.0;
        for (int i = 0; i < c; ++i) denom += std::exp(static_cast<double>(z[i]) - m);
        double tsum = 0.0;
        for (int i = 0; i < c; ++i) tsum += t[i];
        for (int i = 0; i < c; ++i) {
          const double p = std::exp(static_cast<double>(z[i]) - m) / denom;
          zi->grad[static_cast<int64_t>(r) * c + i] += g * (tsum * p - t[i]);
        }
      }
    };
  }
  return out;
}

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const Parameters& params, const std::string& prefix, int heads) {
  require(query.rank() == 2 && key.rank() == 2 && value.rank() == 2,
          "multi_head_attention: rank-2 inputs required");
  const int d = query.dim(1);
  require(key.dim(1) == d && value.dim(1) == d, "multi_head_attention: feature dim mismatch");
  require(key.dim(0) == value.dim(0), "multi_head_attention: key/value row mismatch");
  require(key.dim(0) >= 1, "multi_head_attention: need at least one key");
  if (heads <= 0 || d % heads != 0) {
    throw std::invalid_argument("multi_head_attention: D must be divisible by heads");
  }
  const int dh = d / heads;

  const Tensor& wq = params.get(prefix + ".wq");
  const Tensor& wk = params.get(prefix + ".wk");
  const Tensor& wv = params.get(prefix + ".wv");
  const Tensor& wo = params.get(prefix + ".wo");
  Tensor q = linear(query, wq, params.get(prefix + ".bq"));
  Tensor k = linear(key, wk, params.get(prefix + ".bk"));
  Tensor v = linear(value, wv, params.get(prefix + ".bv"));

  if (FlopCounts* fc = current_flops()) {
    const uint64_t nq = static_cast<uint64_t>(query.dim(0));
    const uint64_t nk = static_cast<uint64_t>(key.dim(0));
    fc->attn_score_macs += static_cast<uint64_t>(heads) * nq * nk * dh;
    fc->attn_apply_macs += static_cast<uint64_t>(heads) * nq * nk * dh;
  }

  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor concat;
  for (int hd = 0; hd < heads; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor kh = slice_cols(k, hd * dh, dh);
    Tensor vh = slice_cols(v, hd * dh, dh);
    Tensor scores = scale(matmul(qh, transpose2d(kh)), inv_scale);
    Tensor attn = softmax(scores);
    Tensor oh = matmul(attn, vh);
    concat = hd == 0 ? oh : concat_lastdim(concat, oh);
  }
  return linear(concat, wo, params.get(prefix + ".bo"));
}

KinkMarginScope::KinkMarginScope(double* margin) : previous_(g_kink_margin) {
  g_kink_margin = margin;
}
KinkMarginScope::~KinkMarginScope() { g_kink_margin = previous_; }

}  // namespace faim
