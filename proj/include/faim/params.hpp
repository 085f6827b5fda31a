#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "faim/tensor.hpp"

namespace faim {

// Named, seeded parameter store. Initialization is a pure function of
// (rng_seed, name): inserting the same names in any order with the same seed
// reproduces bit-identical tensors. Weights use Kaiming-uniform
// (bound = sqrt(6/fan_in)), biases start at zero.
class Parameters {
public:
  explicit Parameters(uint64_t rng_seed = 0) : seed_(rng_seed) {}

  uint64_t seed() const { return seed_; }

  Tensor& add_conv(const std::string& name, int cout, int cin, int kh, int kw);
  Tensor& add_linear(const std::string& name, int dout, int din);
  Tensor& add_zeros(const std::string& name, Shape shape);
  // Adopt an externally built tensor (checkpoint loading).
  Tensor& add_tensor(const std::string& name, Tensor t);

  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::vector<std::string> names() const;  // sorted
  size_t size() const { return tensors_.size(); }

  void zero_grad();

  // FNV-1a over name, shape and payload bytes of the selected tensors.
  uint64_t checksum(const std::vector<std::string>& names) const;

private:
  Tensor& insert(const std::string& name, Tensor t);
  std::map<std::string, Tensor> tensors_;
  uint64_t seed_;
};

}  // namespace faim
