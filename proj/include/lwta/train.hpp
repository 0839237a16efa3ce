#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lwta/config.hpp"
#include "lwta/data.hpp"
#include "lwta/models.hpp"
#include "lwta/objective.hpp"
#include "lwta/optim.hpp"

namespace lwta {

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adamw;
  double learning_rate = 1e-3;
  double weight_decay = 0.02;
  double momentum = 0.9;
  LrSchedule schedule = LrSchedule::cosine;
  long warmup_epochs = 0;
  long epochs = 10;
  long batch_size = 64;
  std::uint64_t seed = 0;
  long inference_samples = 4;
  /// KL weight per example; defaults to 1 / |D|.
  std::optional<double> kl_weight;
  /// Checkpoint cadence in epochs (0 disables); the file is replaced each time.
  long checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  void validate() const;
  static TrainConfig from_config(const Config& config);
  Config to_config() const;
};

struct EpochRow {
  long epoch = 0;
  double loss = 0.0;
  double cross_entropy = 0.0;
  double kl = 0.0;
  double accuracy = 0.0;
  /// Winners over units, counted across every example of the epoch, per LWTA layer.
  std::vector<double> active_fraction;
};

struct TrainingReport {
  std::vector<std::string> lwta_layers;
  std::vector<EpochRow> rows;

  std::string to_csv() const;
};

/// Mini-batch training on the negative ELBO with one sampled forward pass per step.
/// Deterministic for a fixed config.seed. A non-finite loss restores the weights from before
/// the failing step, writes them to the checkpoint path if one is configured, and raises
/// DivergenceError.
TrainingReport train(Model& model, const Dataset& data, const TrainConfig& config);

/// Averages the logits of `samples` forward passes, then applies a softmax. Rows are examples.
RowMatrix<double> predict_bayesian_average(const Model& model, const Tensor& x, long samples, Rng& rng,
                                           std::optional<CompetitionMode> mode = std::nullopt);

/// Accuracy of the Bayesian-average prediction over the dataset.
double evaluate_accuracy(const Model& model, const Dataset& data, long samples, Rng& rng,
                         std::optional<CompetitionMode> mode = std::nullopt, long batch_size = 256);

}  // namespace lwta
