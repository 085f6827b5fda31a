#pragma once

#include "faim/model.hpp"
#include "faim/params.hpp"
#include "faim/tensor.hpp"

namespace faim {

struct InstanceFeatureMap {
  Tensor tensor;  // [C',H,W]
  Level source_level = Level::P3;
};

void add_ifem_params(Parameters& p, const ModelConfig& cfg);

// Single 3x3 conv, padding 1, C -> C'. No activation; the mask head supplies
// the nonlinearity.
InstanceFeatureMap ifem_extract(const Tensor& v_r, const Parameters& p, Level source_level);

}  // namespace faim
