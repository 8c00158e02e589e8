#pragma once

#include <cstddef>
#include <vector>

#include "cwt/tensor.hpp"

namespace cwt {

struct SgdOptions {
  double learning_rate = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// SGD with classic (coupled) weight decay and heavy-ball momentum:
//   g' = grad + weight_decay * param
//   v  = momentum * v + g'
//   param -= lr * v
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdOptions options);

  // Applies one update and clears the gradients. Throws FrozenError for
  // frozen parameters and Error when a gradient is missing.
  void step();
  void zero_grad();

  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const SgdOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  SgdOptions options_;
  std::vector<std::vector<double>> velocity_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam without weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step();
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

enum class ScheduleKind { cosine, constant };

struct ScheduleSpec {
  double base_lr = 0.01;
  std::size_t total_steps = 1;
  ScheduleKind kind = ScheduleKind::cosine;
};

// cosine: base_lr * 0.5 * (1 + cos(pi * step / total_steps)); no warmup.
double schedule_lr(const ScheduleSpec& spec, std::size_t step);

}  // namespace cwt
