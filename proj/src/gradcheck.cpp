#include "cwt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cwt {

namespace {

// Gradients that vanish analytically (for example symmetric two-class
// cross-entropy sums) leave only finite-difference roundoff.
constexpr double kDenominatorFloor = 1e-6;

}  // namespace

double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h,
                         double analytic_scale) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  std::vector<bool> previous(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    previous[i] = inputs[i].requires_grad();
    inputs[i].set_requires_grad(true);
    inputs[i].zero_grad();
  }

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tensor loss = f();
    if (loss.requires_grad()) backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      analytic[i].assign(inputs[i].numel(), 0.0);
      if (inputs[i].has_grad()) {
        const auto g = inputs[i].grad();
        for (std::size_t j = 0; j < g.size(); ++j) analytic[i][j] = g[j] * analytic_scale;
      }
      inputs[i].zero_grad();
    }
  }

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      values[j] = original + h;
      const double up = f().item();
      values[j] = original - h;
      const double down = f().item();
      values[j] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), kDenominatorFloor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].set_requires_grad(previous[i]);
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  Tensor inputs[] = {x};
  return finite_diff_check([&] { return f(x); }, inputs, h);
}

}  // namespace cwt
