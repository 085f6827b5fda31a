#pragma once

#include <map>
#include <string>
#include <vector>

#include "faim/params.hpp"
#include "faim/tensor.hpp"

namespace faim {

// "FVT1" raw tensor file: 4-byte magic, u32 rank, u32 dims, then the
// row-major f32 payload. All integers and floats little-endian.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Checkpoint directory: one .fvt file per tensor plus index.json mapping
// names to files; optimizer momentum buffers ride along under "momentum".
void save_checkpoint(const std::string& dir, const Parameters& params,
                     const std::map<std::string, std::vector<float>>& momentum = {});
struct Checkpoint {
  Parameters params;
  std::map<std::string, std::vector<float>> momentum;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace faim
