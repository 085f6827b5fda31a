#pragma once

#include <cstdint>

namespace faim {

// Structural operation counts, filled in by the forward ops while a FlopScope
// is active on the current thread. Counts depend only on shapes, never on
// values.
struct FlopCounts {
  uint64_t conv_macs = 0;
  uint64_t linear_macs = 0;
  uint64_t matmul_macs = 0;
  // Tagged subsets of matmul_macs, recorded by multi_head_attention for the
  // score matrix (Q·K^T) and the value application (A·V). Not added again to
  // total_flops().
  uint64_t attn_score_macs = 0;
  uint64_t attn_apply_macs = 0;
  uint64_t bilinear_samples = 0;  // 1 sample = 4-tap interpolation
  uint64_t roi_samples = 0;
  uint64_t pool_elems = 0;
  uint64_t softmax_elems = 0;
  uint64_t elementwise = 0;

  uint64_t total_flops() const {
    return 2 * (conv_macs + linear_macs + matmul_macs) + 8 * (bilinear_samples + roi_samples) +
           pool_elems + 5 * softmax_elems + elementwise;
  }

  FlopCounts& operator+=(const FlopCounts& o) {
    conv_macs += o.conv_macs;
    linear_macs += o.linear_macs;
    matmul_macs += o.matmul_macs;
    attn_score_macs += o.attn_score_macs;
    attn_apply_macs += o.attn_apply_macs;
    bilinear_samples += o.bilinear_samples;
    roi_samples += o.roi_samples;
    pool_elems += o.pool_elems;
    softmax_elems += o.softmax_elems;
    elementwise += o.elementwise;
    return *this;
  }
};

FlopCounts* current_flops();

// RAII: routes op counts on this thread into `counts` for the scope lifetime.
class FlopScope {
public:
  explicit FlopScope(FlopCounts* counts);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

private:
  FlopCounts* previous_;
};

}  // namespace faim
