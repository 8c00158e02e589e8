#pragma once

#include <functional>
#include <span>

#include "cwt/tensor.hpp"

namespace cwt {

// Compares reverse-mode gradients against central differences
// (f(x + h e) - f(x - h e)) / 2h for every coordinate of every input.
// Returns the max relative error, using max(|a|, |b|, 1e-6) as denominator.
// `f` must be deterministic; inputs must be leaves.
double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h,
                         double analytic_scale = 1.0);

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h);

}  // namespace cwt
