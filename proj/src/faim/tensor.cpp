#include "faim/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace faim {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void check_finite(const std::vector<float>& v, const char* what) {
  for (float x : v) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument(std::string(what) + ": non-finite value");
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  if (!std::isfinite(value)) throw std::invalid_argument("Tensor::full: non-finite value");
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                " does not match data length " + std::to_string(data.size()));
  }
  check_finite(data, "Tensor::from_data");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) {
  Tensor t = from_data({1}, {static_cast<float>(value)});
  t.impl()->scalar64 = value;
  return t;
}

double Tensor::scalar64() const {
  if (numel() != 1) throw std::logic_error("scalar64 on non-scalar tensor");
  if (std::isnan(impl_->scalar64) && std::isfinite(impl_->data[0])) {
    return static_cast<double>(impl_->data[0]);
  }
  return impl_->scalar64;
}

void Tensor::backward() const {
  if (!impl_ || impl_->numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar tensor");
  }
  // Post-order DFS; reverse order is a valid topological order for the sweep.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  impl_->ensure_grad();
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

Tensor make_op_output(Shape shape, std::vector<const Tensor*> parents) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  impl->shape = std::move(shape);
  for (const Tensor* p : parents) {
    if (p->defined() && p->requires_grad()) impl->requires_grad = true;
  }
  if (impl->requires_grad) {
    for (const Tensor* p : parents) impl->parents.push_back(p->impl());
  }
  return Tensor(std::move(impl));
}

}  // namespace faim
