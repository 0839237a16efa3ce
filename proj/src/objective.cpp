#include "lwta/objective.hpp"

#include <cmath>

#include "lwta/errors.hpp"

namespace lwta {

namespace {

constexpr double kProbabilityTolerance = 1e-5;

Index batch_of(const Shape& shape) { return shape.size() > 1 ? shape.front() : 1; }

}  // namespace

template <typename Scalar>
double kl_categorical_uniform(const Array<Scalar>& pi, const Shape& shape) {
  if (shape.empty() || numel(shape) != pi.size()) throw DimensionError("kl_categorical_uniform: bad shape");
  const Index u = shape.back();
  if (u < 1) throw DimensionError("kl_categorical_uniform: empty competition axis");
  const double log_u = std::log(static_cast<double>(u));
  double total = 0.0;
  for (Index g = 0; g < pi.size() / u; ++g) {
    double mass = 0.0;
    double kl = 0.0;
    for (Index k = 0; k < u; ++k) {
      const double p = pi[g * u + k];
      if (!(p >= -kProbabilityTolerance)) {
        throw ContractError("kl_categorical_uniform: negative probability " + std::to_string(p));
      }
      mass += p;
      if (p > 0.0) kl += p * (std::log(p) + log_u);
    }
    if (std::abs(mass - 1.0) > kProbabilityTolerance) {
      throw ContractError("kl_categorical_uniform: group " + std::to_string(g) + " sums to " + std::to_string(mass));
    }
    total += kl;
  }
  return total / static_cast<double>(batch_of(shape));
}

template <typename Scalar>
BasicTensor<Scalar> kl_uniform_from_logits(const BasicTensor<Scalar>& logits) {
  const Index u = logits.shape().back();
  const auto log_p = log_softmax(logits);
  const auto kl = sum(mul(exp(log_p), add_scalar(log_p, static_cast<Scalar>(std::log(static_cast<double>(u))))));
  return scale(kl, Scalar(1) / static_cast<Scalar>(batch_of(logits.shape())));
}

template <typename Scalar>
std::pair<BasicTensor<Scalar>, ElboBreakdown> elbo_loss(const BasicTensor<Scalar>& logits,
                                                        std::span<const int> labels,
                                                        std::span<const WinnerSample<Scalar>> samples,
                                                        double kl_weight, std::size_t lwta_layers) {
  if (samples.size() != lwta_layers) {
    throw ContractError("elbo_loss: expected " + std::to_string(lwta_layers) + " winner samples, got " +
                        std::to_string(samples.size()));
  }
  if (!(kl_weight >= 0.0)) throw ParameterError("elbo_loss: KL weight must be nonnegative");
  ElboBreakdown breakdown;
  breakdown.kl_weight = kl_weight;
  auto ce = cross_entropy(logits, labels);
  breakdown.cross_entropy = ce.item();

  BasicTensor<Scalar> kl_sum;
  for (const auto& sample : samples) {
    if (!sample.logits.defined()) throw ContractError("elbo_loss: winner sample without logits");
    // Token-level samples arrive as [n * T, B, U]; their KL is summed over each example's tokens.
    const Index rows = sample.shape.front(), n = logits.dim(0);
    if (rows % n != 0) throw ContractError("elbo_loss: winner sample batch does not match logits");
    auto kl = kl_uniform_from_logits(sample.logits);
    if (rows != n) kl = scale(kl, static_cast<Scalar>(rows / n));
    breakdown.kl_per_layer.push_back(static_cast<double>(kl.item()));
    breakdown.kl_total += breakdown.kl_per_layer.back();
    kl_sum = kl_sum.defined() ? add(kl_sum, kl) : kl;
  }
  BasicTensor<Scalar> loss = ce;
  if (kl_sum.defined() && kl_weight > 0.0) loss = add(ce, scale(kl_sum, static_cast<Scalar>(kl_weight)));
  breakdown.loss = static_cast<double>(loss.item());
  return {loss, breakdown};
}

#define LWTA_INSTANTIATE_OBJECTIVE(S)                                                                   \
  template double kl_categorical_uniform(const Array<S>&, const Shape&);                                \
  template BasicTensor<S> kl_uniform_from_logits(const BasicTensor<S>&);                                \
  template std::pair<BasicTensor<S>, ElboBreakdown> elbo_loss(const BasicTensor<S>&, std::span<const int>, \
                                                              std::span<const WinnerSample<S>>, double,     \
                                                              std::size_t);

LWTA_INSTANTIATE_OBJECTIVE(float)
LWTA_INSTANTIATE_OBJECTIVE(double)

#undef LWTA_INSTANTIATE_OBJECTIVE

}  // namespace lwta
