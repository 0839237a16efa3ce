#include "lwta/optim.hpp"

#include <cmath>
#include <numbers>

#include "lwta/errors.hpp"

namespace lwta {

Optimizer::Optimizer(std::vector<Tensor> parameters, OptimizerConfig config)
    : parameters_(std::move(parameters)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
  if (config_.weight_decay < 0.0) throw ParameterError("weight decay must be nonnegative");
  for (const auto& p : parameters_) {
    if (!p.requires_grad()) throw ParameterError("optimizer given a tensor that does not require gradients");
    first_.push_back(Array<float>::Zero(p.size()));
    if (config_.kind == OptimizerKind::adamw) second_.push_back(Array<float>::Zero(p.size()));
  }
}

void Optimizer::step(double lr) {
  ++steps_;
  const auto t = static_cast<double>(steps_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    Tensor& p = parameters_[i];
    if (!p.has_grad()) continue;
    Array<float> g = p.grad();
    Array<float>& w = p.mutable_data();
    if (config_.kind == OptimizerKind::adamw) {
      w *= static_cast<float>(1.0 - lr * config_.weight_decay);
      first_[i] = static_cast<float>(config_.beta1) * first_[i] + static_cast<float>(1.0 - config_.beta1) * g;
      second_[i] = static_cast<float>(config_.beta2) * second_[i] + static_cast<float>(1.0 - config_.beta2) * g.square();
      const Array<float> m_hat = first_[i] / static_cast<float>(bias1);
      const Array<float> v_hat = second_[i] / static_cast<float>(bias2);
      w -= static_cast<float>(lr) * m_hat / (v_hat.sqrt() + static_cast<float>(config_.eps));
    } else {
      g += static_cast<float>(config_.weight_decay) * w;
      first_[i] = static_cast<float>(config_.momentum) * first_[i] + g;
      w -= static_cast<float>(lr) * first_[i];
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : parameters_) p.zero_grad();
}

double learning_rate_at(double base, LrSchedule schedule, long epoch, long epochs, long warmup_epochs) {
  if (epoch < warmup_epochs) return base * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
  if (schedule == LrSchedule::constant) return base;
  const long span = std::max(1L, epochs - warmup_epochs);
  const double progress = static_cast<double>(epoch - warmup_epochs) / static_cast<double>(span);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace lwta
