#include "faim/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "faim/rng.hpp"

namespace faim {

namespace {

Tensor kaiming_uniform(Shape shape, int fan_in, uint64_t seed) {
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  Rng rng(seed);
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

Tensor& Parameters::insert(const std::string& name, Tensor t) {
  auto [it, inserted] = tensors_.emplace(name, std::move(t));
  if (!inserted) throw std::invalid_argument("Parameters: duplicate name '" + name + "'");
  return it->second;
}

Tensor& Parameters::add_conv(const std::string& name, int cout, int cin, int kh, int kw) {
  return insert(name, kaiming_uniform({cout, cin, kh, kw}, cin * kh * kw,
                                      mix_seed(seed_, fnv1a(name.c_str()))));
}

Tensor& Parameters::add_linear(const std::string& name, int dout, int din) {
  return insert(name, kaiming_uniform({dout, din}, din, mix_seed(seed_, fnv1a(name.c_str()))));
}

Tensor& Parameters::add_zeros(const std::string& name, Shape shape) {
  return insert(name, Tensor::zeros(std::move(shape), true));
}

Tensor& Parameters::add_tensor(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  return insert(name, std::move(t));
}

Tensor& Parameters::get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("Parameters: unknown name '" + name + "'");
  return it->second;
}

const Tensor& Parameters::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("Parameters: unknown name '" + name + "'");
  return it->second;
}

std::vector<std::string> Parameters::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

void Parameters::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

uint64_t Parameters::checksum(const std::vector<std::string>& names) const {
  uint64_t h = 0xCBF29CE484222325ull;
  auto feed = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ull;
    }
  };
  for (const std::string& name : names) {
    const Tensor& t = get(name);
    feed(name.data(), name.size());
    for (int d : t.shape()) feed(&d, sizeof(d));
    feed(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
  }
  return h;
}

}  // namespace faim
