#include "cwt/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace cwt {

Sgd::Sgd(std::vector<Tensor> params, SgdOptions options) : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate >= 0.0)) throw ConfigError("sgd: learning rate must be nonnegative");
  if (!(options_.momentum >= 0.0 && options_.momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
  if (!(options_.weight_decay >= 0.0)) throw ConfigError("sgd: weight decay must be nonnegative");
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (p.frozen()) throw FrozenError("sgd: parameter " + shape_str(p.shape()) + " is frozen");
    velocity_.emplace_back(p.numel(), 0.0);
  }
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].frozen()) throw FrozenError("sgd: parameter " + std::to_string(i) + " is frozen");
    if (!params_[i].has_grad()) throw Error("sgd: parameter " + std::to_string(i) + " has no gradient");
  }
  const double lr = options_.learning_rate;
  const double mom = options_.momentum;
  const double wd = options_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_data();
    const auto grad = params_[i].grad();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j] + wd * values[j];
      vel[j] = mom * vel[j] + g;
      values[j] -= lr * vel[j];
    }
    params_[i].zero_grad();
  }
}

void Sgd::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate >= 0.0)) throw ConfigError("adam: learning rate must be nonnegative");
  if (!(options_.beta1 >= 0.0 && options_.beta1 < 1.0 && options_.beta2 >= 0.0 && options_.beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(options_.eps > 0.0)) throw ConfigError("adam: eps must be positive");
  for (const Tensor& p : params_) {
    if (p.frozen()) throw FrozenError("adam: parameter " + shape_str(p.shape()) + " is frozen");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].frozen()) throw FrozenError("adam: parameter " + std::to_string(i) + " is frozen");
    if (!params_[i].has_grad()) throw Error("adam: parameter " + std::to_string(i) + " has no gradient");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_data();
    const auto grad = params_[i].grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = options_.beta1 * m_[i][j] + (1.0 - options_.beta1) * grad[j];
      v_[i][j] = options_.beta2 * v_[i][j] + (1.0 - options_.beta2) * grad[j] * grad[j];
      values[j] -= options_.learning_rate * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + options_.eps);
    }
    params_[i].zero_grad();
  }
}

double schedule_lr(const ScheduleSpec& spec, std::size_t step) {
  if (spec.total_steps == 0) throw ConfigError("schedule: total_steps must be positive");
  if (step > spec.total_steps) {
    throw ConfigError("schedule: step " + std::to_string(step) + " beyond total " + std::to_string(spec.total_steps));
  }
  if (spec.kind == ScheduleKind::constant) return spec.base_lr;
  if (step == spec.total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(spec.total_steps);
  return spec.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace cwt
