#pragma once

#include <vector>

#include "faim/tensor.hpp"

namespace faim {

class Parameters;

// Records the smallest distance to a subgradient kink seen by relu (|x|) and
// min/max (|a-b|) on this thread; used to pick finite-difference check points
// at which the loss is locally smooth.
class KinkMarginScope {
public:
  explicit KinkMarginScope(double* margin);
  ~KinkMarginScope();
  KinkMarginScope(const KinkMarginScope&) = delete;
  KinkMarginScope& operator=(const KinkMarginScope&) = delete;

private:
  double* previous_;
};

// Elementwise (same shape unless noted). All ops record parents on the tape
// and define gradients w.r.t. every input marked requires_grad.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid_t(const Tensor& a);
Tensor softplus(const Tensor& a);
// Elementwise min/max; ties route the gradient to the first argument.
Tensor min_t(const Tensor& a, const Tensor& b);
Tensor max_t(const Tensor& a, const Tensor& b);
Tensor add_n(const std::vector<Tensor>& xs);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// Affine map along the last dimension. input [..., Din], weight [Dout, Din],
// bias [Dout]. Supported input ranks: 1 and 2.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Stride-1 cross-correlation. input [Cin,H,W], kernel [Cout,Cin,kh,kw] with
// kh,kw odd, bias [Cout], padding >= 0.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding);

// Numerically stabilized softmax along the last axis.
Tensor softmax(const Tensor& input);

// [C,H,W] with even H,W -> [C,H/2,W/2]
Tensor avgpool2x2(const Tensor& input);

// Half-pixel-center bilinear resampling of [C,H,W] to [C,outH,outW].
// Source coordinate for output index i is (i+0.5)*H/outH - 0.5, clamped.
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

// Reductions; the exact 64-bit result is kept alongside the f32 payload.
Tensor sum(const Tensor& input);
Tensor mean(const Tensor& input);

// Shape plumbing.
Tensor reshape(const Tensor& input, Shape shape);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);        // [N,Da]+[N,Db] -> [N,Da+Db]
Tensor concat_rows(const std::vector<Tensor>& xs);              // [Ni,D] -> [sum Ni, D]
Tensor stack_rows(const std::vector<Tensor>& xs);               // N x [D] -> [N,D]
Tensor stack_first(const std::vector<Tensor>& xs);              // N x [s...] -> [N, s...]
Tensor slice_first(const Tensor& x, int i);                     // [N, s...] -> [s...]
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);  // [N,D] -> [k,D]
Tensor slice_cols(const Tensor& x, int start, int len);         // [N,D] -> [N,len]
Tensor row(const Tensor& x, int r);                             // [N,D] -> [D]
Tensor gather_cell(const Tensor& x, int r, int c);              // [C,H,W] -> [C]
Tensor slice_channel(const Tensor& x, int n, int c);            // [N,C,H,W] -> [H,W]
Tensor gather_elements(const Tensor& x, const std::vector<int64_t>& flat);  // -> [k]

// Mean binary cross-entropy on logits with probabilities clamped to
// [1e-7, 1-1e-7]. targets must not require grad.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);

// Soft Dice loss on logits (1 - 2|P∩G| / (|P|+|G|)), mean over the tensor.
Tensor dice_loss(const Tensor& logits, const Tensor& targets);

// Mean softmax cross-entropy over rows; targets are row distributions
// (one-hot or soft) and must not require grad. logits/targets are [N,C].
Tensor softmax_xent_mean(const Tensor& logits, const Tensor& targets);

// Scaled dot-product multi-head attention with output projection.
// query [Nq,D], key/value [Nk,D]; params hold <prefix>.{wq,wk,wv,wo} [D,D]
// and <prefix>.{bq,bk,bv,bo} [D]. D must be divisible by heads.
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const Parameters& params, const std::string& prefix, int heads);

}  // namespace faim
