#include "faim/ifem.hpp"

#include <stdexcept>

#include "faim/ops.hpp"

namespace faim {

void add_ifem_params(Parameters& p, const ModelConfig& cfg) {
  p.add_conv("ifem.w", cfg.resolved_c_prime(), cfg.channels, 3, 3);
  p.add_zeros("ifem.b", {cfg.resolved_c_prime()});
}

InstanceFeatureMap ifem_extract(const Tensor& v_r, const Parameters& p, Level source_level) {
  const Tensor& w = p.get("ifem.w");
  if (v_r.rank() != 3 || v_r.dim(0) != w.dim(1)) {
    throw std::invalid_argument("ifem_extract: channel mismatch with parameters");
  }
  return InstanceFeatureMap{conv2d(v_r, w, p.get("ifem.b"), 1), source_level};
}

}  // namespace faim
