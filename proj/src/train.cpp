#include "lwta/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "lwta/checkpoint.hpp"
#include "lwta/errors.hpp"

namespace lwta {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
  if (epochs < 1) throw ParameterError("epochs must be at least 1");
  if (batch_size < 1) throw ParameterError("batch size must be at least 1");
  if (inference_samples < 1) throw ParameterError("inference samples must be at least 1");
  if (warmup_epochs < 0 || checkpoint_every < 0) throw ParameterError("negative warmup or checkpoint cadence");
  if (kl_weight && *kl_weight < 0.0) throw ParameterError("KL weight must be nonnegative");
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  const std::string optimizer = c.get_string("train.optimizer", "adamw");
  if (optimizer == "adamw") {
    t.optimizer = OptimizerKind::adamw;
  } else if (optimizer == "sgd") {
    t.optimizer = OptimizerKind::sgd_momentum;
  } else {
    throw ParameterError("unknown optimizer '" + optimizer + "' (expected adamw or sgd)");
  }
  const std::string schedule = c.get_string("train.schedule", "cosine");
  if (schedule == "cosine") {
    t.schedule = LrSchedule::cosine;
  } else if (schedule == "constant") {
    t.schedule = LrSchedule::constant;
  } else {
    throw ParameterError("unknown schedule '" + schedule + "' (expected constant or cosine)");
  }
  t.learning_rate = c.get_double("train.lr", t.learning_rate);
  t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
  t.momentum = c.get_double("train.momentum", t.momentum);
  t.warmup_epochs = c.get_int("train.warmup", t.warmup_epochs);
  t.epochs = c.get_int("train.epochs", t.epochs);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
  t.inference_samples = c.get_int("train.inference_samples", t.inference_samples);
  if (c.has("train.kl_weight")) t.kl_weight = c.get_double("train.kl_weight", 0.0);
  t.checkpoint_every = c.get_int("train.checkpoint_every", t.checkpoint_every);
  t.validate();
  return t;
}

Config TrainConfig::to_config() const {
  Config c;
  auto num = [](double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
  };
  c.set("train.optimizer", optimizer == OptimizerKind::adamw ? "adamw" : "sgd");
  c.set("train.schedule", schedule == LrSchedule::cosine ? "cosine" : "constant");
  c.set("train.lr", num(learning_rate));
  c.set("train.weight_decay", num(weight_decay));
  c.set("train.momentum", num(momentum));
  c.set("train.warmup", std::to_string(warmup_epochs));
  c.set("train.epochs", std::to_string(epochs));
  c.set("train.batch_size", std::to_string(batch_size));
  c.set("seed", std::to_string(seed));
  c.set("train.inference_samples", std::to_string(inference_samples));
  if (kl_weight) c.set("train.kl_weight", num(*kl_weight));
  c.set("train.checkpoint_every", std::to_string(checkpoint_every));
  return c;
}

std::string TrainingReport::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,loss,ce,kl,accuracy";
  for (const auto& name : lwta_layers) out << ",active_fraction_" << name;
  out << "\n";
  for (const auto& row : rows) {
    out << row.epoch << ',' << row.loss << ',' << row.cross_entropy << ',' << row.kl << ',' << row.accuracy;
    for (double f : row.active_fraction) out << ',' << f;
    out << "\n";
  }
  return out.str();
}

namespace {

std::vector<Array<float>> snapshot(const Model& model) {
  std::vector<Array<float>> values;
  for (const auto& p : model.parameters()) values.push_back(p.tensor.data());
  return values;
}

void restore(const Model& model, const std::vector<Array<float>>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    Tensor t = model.parameters()[i].tensor;
    t.mutable_data() = values[i];
  }
}

}  // namespace

TrainingReport train(Model& model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw ParameterError("training set is empty");
  for (int label : data.labels) {
    if (label < 0 || label >= model.spec().classes) {
      throw IndexError("label " + std::to_string(label) + " outside [0, " + std::to_string(model.spec().classes) + ")");
    }
  }

  Rng rng(config.seed);
  Rng order_rng = rng.split();
  Rng noise_rng = rng.split();
  OptimizerConfig opt;
  opt.kind = config.optimizer;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  opt.momentum = config.momentum;
  Optimizer optimizer(model.parameter_tensors(), opt);

  const double beta = config.kl_weight.value_or(1.0 / static_cast<double>(data.size()));
  const auto lwta_count = static_cast<std::size_t>(model.spec().lwta_layer_count());
  TrainingReport report{model.lwta_layer_names(), {}};

  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  ForwardOptions options{&noise_rng, std::nullopt};
  std::uint64_t step = 0;

  for (long epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    const double lr = learning_rate_at(config.learning_rate, config.schedule, epoch, config.epochs, config.warmup_epochs);
    double loss_sum = 0.0, ce_sum = 0.0, kl_sum = 0.0, correct = 0.0;
    std::vector<double> winners(lwta_count, 0.0), units(lwta_count, 0.0);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto count = std::min(order.size() - start, static_cast<std::size_t>(config.batch_size));
      const std::span<const Index> indices(order.data() + start, count);
      const Tensor x = data.batch(indices);
      const std::vector<int> labels = data.batch_labels(indices);
      const auto before = snapshot(model);

      double loss_value = std::numeric_limits<double>::quiet_NaN();
      ElboBreakdown parts;
      try {
        auto result = forward(model, x, options);
        auto [loss, breakdown] =
            elbo_loss<float>(result.logits, labels, result.samples, beta, lwta_count);
        loss_value = breakdown.loss;
        parts = breakdown;
        if (std::isfinite(loss_value)) {
          optimizer.zero_grad();
          backward(loss);
          optimizer.step(lr);
          ++step;
          const auto logits = result.logits.matrix();
          for (Index r = 0; r < logits.rows(); ++r) {
            Index best = 0;
            logits.row(r).maxCoeff(&best);
            correct += best == labels[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
          }
          for (std::size_t l = 0; l < lwta_count; ++l) {
            winners[l] += result.samples[l].xi.sum();
            units[l] += static_cast<double>(result.samples[l].xi.size());
          }
        }
      } catch (const NumericError&) {
        loss_value = std::numeric_limits<double>::quiet_NaN();
      }

      bool finite = std::isfinite(loss_value);
      for (const auto& p : model.parameters()) finite = finite && p.tensor.data().allFinite();
      if (!finite) {
        restore(model, before);
        if (!config.checkpoint_path.empty()) {
          save_checkpoint(config.checkpoint_path, model, {step, noise_rng.state()});
        }
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + "; weights restored to the last finite state");
      }
      const auto n = static_cast<double>(count);
      loss_sum += parts.loss * n;
      ce_sum += parts.cross_entropy * n;
      kl_sum += parts.kl_total * n;
    }

    const auto total = static_cast<double>(data.size());
    EpochRow row{epoch + 1, loss_sum / total, ce_sum / total, kl_sum / total, correct / total, {}};
    for (std::size_t l = 0; l < lwta_count; ++l) row.active_fraction.push_back(winners[l] / units[l]);
    report.rows.push_back(std::move(row));

    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && (epoch + 1) % config.checkpoint_every == 0) {
      save_checkpoint(config.checkpoint_path, model, {step, noise_rng.state()});
    }
  }
  return report;
}

RowMatrix<double> predict_bayesian_average(const Model& model, const Tensor& x, long samples, Rng& rng,
                                           std::optional<CompetitionMode> mode) {
  if (samples < 1) throw ParameterError("need at least one inference sample");
  ForwardOptions options{&rng, mode};
  RowMatrix<double> mean;
  for (long s = 0; s < samples; ++s) {
    const RowMatrix<double> logits = forward(model, x, options).logits.matrix().cast<double>();
    if (s == 0) {
      mean = logits;
    } else {
      mean += logits;
    }
  }
  mean /= static_cast<double>(samples);
  for (Index r = 0; r < mean.rows(); ++r) {
    const double top = mean.row(r).maxCoeff();
    mean.row(r) = (mean.row(r).array() - top).exp().matrix();
    mean.row(r) /= mean.row(r).sum();
  }
  return mean;
}

double evaluate_accuracy(const Model& model, const Dataset& data, long samples, Rng& rng,
                         std::optional<CompetitionMode> mode, long batch_size) {
  if (data.size() == 0) throw ParameterError("evaluation set is empty");
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), Index{0});
  double correct = 0.0;
  for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto count = std::min(all.size() - start, static_cast<std::size_t>(batch_size));
    const std::span<const Index> indices(all.data() + start, count);
    const auto probs = predict_bayesian_average(model, data.batch(indices), samples, rng, mode);
    for (Index r = 0; r < probs.rows(); ++r) {
      Index best = 0;
      probs.row(r).maxCoeff(&best);
      correct += best == data.labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(r)])] ? 1.0 : 0.0;
    }
  }
  return correct / static_cast<double>(data.size());
}

}  // namespace lwta
