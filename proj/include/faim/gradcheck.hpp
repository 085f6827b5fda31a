#pragma once

#include <functional>
#include <vector>

#include "faim/tensor.hpp"

namespace faim {

using ScalarFn = std::function<Tensor(std::vector<Tensor>&)>;

// Central finite differences against the reverse-mode gradient.
// Perturbation per element is epsilon * max(1, |x|); the numeric quotient is
// formed from the 64-bit scalar results. Returns the max over all elements of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
double grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double epsilon = 3e-3);

}  // namespace faim
