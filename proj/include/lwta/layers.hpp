#pragma once

#include <optional>

#include "lwta/ops.hpp"
#include "lwta/random.hpp"

namespace lwta {

enum class CompetitionMode { stochastic, deterministic };

/// Temperature of the Gumbel-Softmax relaxation.
inline constexpr double kDefaultTemperature = 0.67;

/// Outcome of one competition over groups of U units (the last axis).
template <typename Scalar>
struct WinnerSample {
  /// [..., U]; [n x B x U] for dense layers, [n x B x H' x W' x U] for convolutional ones.
  Shape shape;
  /// One-hot winner indicators.
  Array<Scalar> xi;
  /// Competition posterior, softmax of the logits.
  Array<Scalar> pi;
  /// Relaxed sample softmax((logits + g) / tau); equals xi in deterministic mode.
  BasicTensor<Scalar> soft;
  /// Graph-connected competition logits (the linear responses).
  BasicTensor<Scalar> logits;
  /// Gate applied to the responses: forward value xi, gradient routed through `soft`.
  BasicTensor<Scalar> gate;

  Index competitors() const { return shape.back(); }
  Index groups() const { return static_cast<Index>(xi.size()) / competitors(); }
  Index winner(Index group) const;
};

/// Source of standard Gumbel noise: either a live random stream or a frozen buffer
/// that must be consumed exactly.
template <typename Scalar>
class GumbelSource {
 public:
  GumbelSource(Rng& rng) : rng_(&rng) {}  // NOLINT(google-explicit-constructor)
  explicit GumbelSource(const Array<Scalar>& frozen) : frozen_(&frozen) {}

  Array<Scalar> draw(Index count);

 private:
  Rng* rng_ = nullptr;
  const Array<Scalar>* frozen_ = nullptr;
};

/// Straight-through Gumbel-Softmax over the last axis of `logits`.
template <typename Scalar>
WinnerSample<Scalar> sample_gumbel_softmax_st(const BasicTensor<Scalar>& logits, Scalar temperature,
                                              GumbelSource<Scalar> noise);

/// Argmax winners, lowest index on ties. No gradient flows through the selection.
template <typename Scalar>
WinnerSample<Scalar> select_argmax_winners(const BasicTensor<Scalar>& logits);

/// Dense LWTA layer. The weight is stored as [J x B*U], which is the row-major
/// layout of W(J, B, U); column b*U + u holds unit u of block b.
template <typename Scalar>
struct LwtaDenseLayer {
  BasicTensor<Scalar> weight;
  BasicTensor<Scalar> bias;  // [B*U]; may be undefined
  Index blocks = 1;
  Index competitors = 2;
  Scalar temperature = static_cast<Scalar>(kDefaultTemperature);
  CompetitionMode mode = CompetitionMode::stochastic;

  static LwtaDenseLayer create(Index inputs, Index blocks, Index competitors, Rng& rng,
                               bool with_bias = true);

  Index inputs() const { return weight.dim(0); }
  Index width() const { return blocks * competitors; }
  void validate() const;
};

/// Convolutional LWTA layer; kernels are [B*U x C x kh x kw], the B kernel groups each
/// holding U competing feature maps.
template <typename Scalar>
struct LwtaConvLayer {
  BasicTensor<Scalar> weight;
  BasicTensor<Scalar> bias;  // [B*U]; may be undefined
  Index blocks = 1;
  Index competitors = 2;
  Index stride = 1;
  Index padding = 0;
  Scalar temperature = static_cast<Scalar>(kDefaultTemperature);
  CompetitionMode mode = CompetitionMode::stochastic;

  static LwtaConvLayer create(Index channels, Index blocks, Index competitors, Index kernel,
                              Index stride, Index padding, Rng& rng, bool with_bias = true);

  Index channels() const { return weight.dim(1); }
  Index width() const { return blocks * competitors; }
  ConvGeometry geometry() const { return {weight.dim(2), weight.dim(3), stride, padding}; }
  void validate() const;
};

template <typename Scalar>
struct LwtaOutput {
  /// Dense: [n x B*U], block-major. Conv: [n x B*U x H' x W'].
  BasicTensor<Scalar> output;
  WinnerSample<Scalar> sample;
};

/// y_{b,u} = xi_{b,u} * h_{b,u} with h = xW (+ bias). `mode` overrides the layer's own mode.
template <typename Scalar>
LwtaOutput<Scalar> lwta_dense_forward(const LwtaDenseLayer<Scalar>& layer, const BasicTensor<Scalar>& x,
                                      GumbelSource<Scalar> noise,
                                      std::optional<CompetitionMode> mode = std::nullopt);

/// Position-wise competition among the U maps of each kernel group.
template <typename Scalar>
LwtaOutput<Scalar> lwta_conv_forward(const LwtaConvLayer<Scalar>& layer, const BasicTensor<Scalar>& x,
                                     GumbelSource<Scalar> noise,
                                     std::optional<CompetitionMode> mode = std::nullopt);

/// Uniform in [-s, s] with s = sqrt(1 / fan_in); biases are zeroed.
template <typename Scalar>
void init_weights(LwtaDenseLayer<Scalar>& layer, Rng& rng);
template <typename Scalar>
void init_weights(LwtaConvLayer<Scalar>& layer, Rng& rng);

template <typename Scalar>
Array<Scalar> uniform_fan_in(Index count, Index fan_in, Rng& rng);

/// Fraction of units marked as winners, counted structurally from xi.
template <typename Scalar>
double active_fraction(const WinnerSample<Scalar>& sample);

}  // namespace lwta
