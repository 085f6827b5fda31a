#include "faim/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace faim {

double grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double epsilon) {
  if (epsilon < 1e-5 || epsilon > 1e-2) {
    throw std::invalid_argument("grad_check: epsilon must be in [1e-5, 1e-2]");
  }
  for (Tensor& t : inputs) t.set_requires_grad(true);

  Tensor out = f(inputs);
  if (out.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  for (Tensor& t : inputs) t.zero_grad();
  out.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (Tensor& t : inputs) {
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));
  }

  double max_err = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float orig = t.data()[i];
      const double h = epsilon * std::max(1.0, std::fabs(static_cast<double>(orig)));
      t.data()[i] = static_cast<float>(orig + h);
      const double up = f(inputs).scalar64();
      t.data()[i] = static_cast<float>(orig - h);
      const double dn = f(inputs).scalar64();
      t.data()[i] = orig;
      // Use the realized f32 perturbation so FD is consistent with storage.
      const double hr = 0.5 * (static_cast<double>(static_cast<float>(orig + h)) -
                               static_cast<double>(static_cast<float>(orig - h)));
      const double numeric = (up - dn) / (2.0 * hr);
      const double a = analytic[ti][i];
      const double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace faim
