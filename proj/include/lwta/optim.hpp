#pragma once

#include <string>
#include <vector>

#include "lwta/tensor.hpp"

namespace lwta {

enum class OptimizerKind { adamw, sgd_momentum };
enum class LrSchedule { constant, cosine };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double learning_rate = 1e-3;
  double weight_decay = 0.02;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW (decoupled weight decay) or SGD with momentum and L2 weight decay.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> parameters, OptimizerConfig config);

  /// Applies one update with learning rate `lr` to every parameter holding a gradient.
  void step(double lr);
  void zero_grad();

  const OptimizerConfig& config() const { return config_; }
  long steps() const { return steps_; }

 private:
  std::vector<Tensor> parameters_;
  OptimizerConfig config_;
  std::vector<Array<float>> first_;
  std::vector<Array<float>> second_;
  long steps_ = 0;
};

/// Linear warmup over `warmup_epochs`, then constant or cosine decay to zero at `epochs`.
double learning_rate_at(double base, LrSchedule schedule, long epoch, long epochs, long warmup_epochs);

}  // namespace lwta
