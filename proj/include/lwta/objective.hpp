#pragma once

#include <span>
#include <utility>
#include <vector>

#include "lwta/layers.hpp"

namespace lwta {

struct ElboBreakdown {
  double cross_entropy = 0.0;
  double kl_total = 0.0;
  std::vector<double> kl_per_layer;
  double kl_weight = 0.0;
  double loss = 0.0;
};

/// KL(pi || Categorical(1/U)) = sum_u pi_u log(pi_u U), with 0 log 0 := 0. `pi` is laid out as
/// [n x ... x U]: the value sums over every group of U entries and averages over the leading
/// (batch) axis. Rank-1 input is a single group. Raises ContractError for entries below -1e-5
/// or groups whose sum is off by more than 1e-5. Accumulates in double.
template <typename Scalar>
double kl_categorical_uniform(const Array<Scalar>& pi, const Shape& shape);

template <typename Scalar>
double kl_categorical_uniform(const BasicTensor<Scalar>& pi) {
  return kl_categorical_uniform(pi.data(), pi.shape());
}

/// Differentiable KL of softmax(logits) against the uniform prior, same reduction as above.
template <typename Scalar>
BasicTensor<Scalar> kl_uniform_from_logits(const BasicTensor<Scalar>& logits);

/// Negative ELBO for one Monte-Carlo sample: cross_entropy + kl_weight * sum of per-layer KL.
/// `lwta_layers` is the number of competition layers the forward pass went through; a
/// mismatched sample count raises ContractError.
template <typename Scalar>
std::pair<BasicTensor<Scalar>, ElboBreakdown> elbo_loss(const BasicTensor<Scalar>& logits,
                                                        std::span<const int> labels,
                                                        std::span<const WinnerSample<Scalar>> samples,
                                                        double kl_weight, std::size_t lwta_layers);

}  // namespace lwta
