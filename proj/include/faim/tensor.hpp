#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace faim {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  // Gradients are accumulated in 64-bit; empty until backward() touches the node.
  std::vector<double> grad;
  bool requires_grad = false;
  // Reductions and losses record their exact 64-bit result here so that
  // finite-difference checks are not limited by f32 storage of the scalar.
  double scalar64 = std::numeric_limits<double>::quiet_NaN();

  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward;  // pulls grad of this node into parents

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major f32 tensor with an optional reverse-mode tape.
// Values are validated finite at construction; op outputs are validated when
// FAIM_CHECK_FINITE is defined (Debug builds).
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return impl_ ? impl_->numel() : 0; }

  const float* data() const { return impl_->data.data(); }
  float* data() { return impl_->data.data(); }
  const std::vector<float>& vec() const { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // Precise value for scalar tensors (falls back to f32 payload).
  double scalar64() const;

  // Reverse-mode sweep from a scalar output. Accumulates into .grad() of every
  // reachable tensor with requires_grad. Single-threaded by contract.
  void backward() const;

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad() { if (impl_) impl_->grad.assign(impl_->data.size(), 0.0); }

  std::shared_ptr<TensorImpl>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
  std::shared_ptr<TensorImpl> impl_;
};

// Throws std::invalid_argument when v contains NaN/Inf.
void check_finite(const std::vector<float>& v, const char* what);

// Allocates an op output node wired to its parents; requires_grad is inherited.
Tensor make_op_output(Shape shape, std::vector<const Tensor*> parents);

}  // namespace faim
