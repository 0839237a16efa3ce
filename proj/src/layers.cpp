#include "lwta/layers.hpp"

#include <cmath>

#include "lwta/errors.hpp"

namespace lwta {

namespace {

template <typename Scalar>
Index argmax_lowest(const Eigen::Ref<const Array<Scalar>>& v) {
  Index best = 0;
  for (Index u = 1; u < v.size(); ++u) {
    if (v[u] > v[best]) best = u;
  }
  return best;
}

template <typename Scalar>
Array<Scalar> one_hot_argmax(const Array<Scalar>& scores, Index competitors) {
  Array<Scalar> xi = Array<Scalar>::Zero(scores.size());
  for (Index g = 0; g < scores.size() / competitors; ++g) {
    xi[g * competitors + argmax_lowest<Scalar>(scores.segment(g * competitors, competitors))] = Scalar(1);
  }
  return xi;
}

template <typename Scalar>
WinnerSample<Scalar> compete(const BasicTensor<Scalar>& logits, CompetitionMode mode, Scalar temperature,
                             GumbelSource<Scalar>& noise) {
  if (mode == CompetitionMode::deterministic) return select_argmax_winners(logits);
  return sample_gumbel_softmax_st(logits, temperature, noise);
}

void check_grouping(Index blocks, Index competitors) {
  if (blocks < 1) throw ParameterError("LWTA layer needs at least one block");
  if (competitors < 2) throw ParameterError("LWTA blocks need at least two competitors");
}

}  // namespace

template <typename Scalar>
Index WinnerSample<Scalar>::winner(Index group) const {
  const Index u = competitors();
  return argmax_lowest<Scalar>(xi.segment(group * u, u));
}

template <typename Scalar>
Array<Scalar> GumbelSource<Scalar>::draw(Index count) {
  if (frozen_ != nullptr) {
    if (frozen_->size() != count) {
      throw ParameterError("frozen Gumbel noise holds " + std::to_string(frozen_->size()) +
                           " values, forward pass needs " + std::to_string(count));
    }
    return *frozen_;
  }
  Array<Scalar> g(count);
  for (Index i = 0; i < count; ++i) g[i] = static_cast<Scalar>(rng_->gumbel());
  return g;
}

template <typename Scalar>
WinnerSample<Scalar> sample_gumbel_softmax_st(const BasicTensor<Scalar>& logits, Scalar temperature,
                                              GumbelSource<Scalar> noise) {
  if (!(temperature > Scalar(0))) {
    throw ParameterError("Gumbel-Softmax temperature must be positive, got " + std::to_string(temperature));
  }
  if (!logits.data().allFinite()) throw NumericError("competition logits are not finite");
  const Index u = logits.shape().back();
  const auto gumbel = BasicTensor<Scalar>::constant(logits.shape(), noise.draw(logits.size()));
  const auto perturbed = add(logits, gumbel);

  WinnerSample<Scalar> sample;
  sample.shape = logits.shape();
  sample.logits = logits;
  sample.soft = softmax(scale(perturbed, Scalar(1) / temperature));
  sample.xi = one_hot_argmax<Scalar>(perturbed.data(), u);
  sample.pi = softmax(logits.detach()).data();
  sample.gate = straight_through(sample.xi, sample.soft);
  return sample;
}

template <typename Scalar>
WinnerSample<Scalar> select_argmax_winners(const BasicTensor<Scalar>& logits) {
  if (!logits.data().allFinite()) throw NumericError("competition logits are not finite");
  WinnerSample<Scalar> sample;
  sample.shape = logits.shape();
  sample.logits = logits;
  sample.xi = one_hot_argmax<Scalar>(logits.data(), logits.shape().back());
  sample.pi = softmax(logits.detach()).data();
  sample.soft = BasicTensor<Scalar>::constant(logits.shape(), sample.xi);
  sample.gate = sample.soft;
  return sample;
}

template <typename Scalar>
Array<Scalar> uniform_fan_in(Index count, Index fan_in, Rng& rng) {
  const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
  Array<Scalar> values(count);
  for (Index i = 0; i < count; ++i) values[i] = static_cast<Scalar>(rng.uniform(-s, s));
  return values;
}

template <typename Scalar>
void LwtaDenseLayer<Scalar>::validate() const {
  check_grouping(blocks, competitors);
  if (!(temperature > Scalar(0))) throw ParameterError("LWTA temperature must be positive");
  if (!weight.defined() || weight.rank() != 2 || weight.dim(1) != width()) {
    throw DimensionError("LWTA dense weight must be [J x " + std::to_string(width()) + "]");
  }
  if (bias.defined() && bias.size() != width()) throw DimensionError("LWTA dense bias must hold B*U values");
}

template <typename Scalar>
LwtaDenseLayer<Scalar> LwtaDenseLayer<Scalar>::create(Index inputs, Index blocks, Index competitors,
                                                      Rng& rng, bool with_bias) {
  LwtaDenseLayer layer;
  layer.blocks = blocks;
  layer.competitors = competitors;
  if (inputs < 1) throw ParameterError("LWTA layer needs a positive input width");
  check_grouping(blocks, competitors);
  layer.weight = BasicTensor<Scalar>::parameter({inputs, blocks * competitors},
                                                Array<Scalar>::Zero(inputs * blocks * competitors));
  if (with_bias) layer.bias = BasicTensor<Scalar>::zeros({blocks * competitors}, true);
  layer.validate();
  init_weights(layer, rng);
  return layer;
}

template <typename Scalar>
void LwtaConvLayer<Scalar>::validate() const {
  check_grouping(blocks, competitors);
  if (!(temperature > Scalar(0))) throw ParameterError("LWTA temperature must be positive");
  if (stride < 1 || padding < 0) throw ParameterError("invalid stride/padding");
  if (!weight.defined() || weight.rank() != 4 || weight.dim(0) != width()) {
    throw DimensionError("LWTA conv kernels must be [" + std::to_string(width()) + " x C x kh x kw]");
  }
  if (bias.defined() && bias.size() != width()) throw DimensionError("LWTA conv bias must hold B*U values");
}

template <typename Scalar>
LwtaConvLayer<Scalar> LwtaConvLayer<Scalar>::create(Index channels, Index blocks, Index competitors,
                                                    Index kernel, Index stride, Index padding, Rng& rng,
                                                    bool with_bias) {
  LwtaConvLayer layer;
  layer.blocks = blocks;
  layer.competitors = competitors;
  layer.stride = stride;
  layer.padding = padding;
  if (channels < 1 || kernel < 1) throw ParameterError("invalid conv layer geometry");
  check_grouping(blocks, competitors);
  const Index out = blocks * competitors;
  layer.weight = BasicTensor<Scalar>::parameter({out, channels, kernel, kernel},
                                                Array<Scalar>::Zero(out * channels * kernel * kernel));
  if (with_bias) layer.bias = BasicTensor<Scalar>::zeros({out}, true);
  layer.validate();
  init_weights(layer, rng);
  return layer;
}

template <typename Scalar>
void init_weights(LwtaDenseLayer<Scalar>& layer, Rng& rng) {
  layer.weight.mutable_data() = uniform_fan_in<Scalar>(layer.weight.size(), layer.inputs(), rng);
  if (layer.bias.defined()) layer.bias.mutable_data().setZero();
}

template <typename Scalar>
void init_weights(LwtaConvLayer<Scalar>& layer, Rng& rng) {
  const Index fan_in = layer.weight.dim(1) * layer.weight.dim(2) * layer.weight.dim(3);
  layer.weight.mutable_data() = uniform_fan_in<Scalar>(layer.weight.size(), fan_in, rng);
  if (layer.bias.defined()) layer.bias.mutable_data().setZero();
}

template <typename Scalar>
LwtaOutput<Scalar> lwta_dense_forward(const LwtaDenseLayer<Scalar>& layer, const BasicTensor<Scalar>& x,
                                      GumbelSource<Scalar> noise, std::optional<CompetitionMode> mode) {
  layer.validate();
  if (x.rank() != 2 || x.dim(1) != layer.inputs()) {
    throw DimensionError("LWTA dense layer expects [n x " + std::to_string(layer.inputs()) + "] input, got " +
                         to_string(x.shape()));
  }
  const Index n = x.dim(0);
  auto h = matmul(x, layer.weight);
  if (layer.bias.defined()) h = add_broadcast(h, layer.bias);
  auto logits = reshape(h, {n, layer.blocks, layer.competitors});

  LwtaOutput<Scalar> out;
  out.sample = compete(logits, mode.value_or(layer.mode), layer.temperature, noise);
  out.output = reshape(mul(out.sample.gate, logits), {n, layer.width()});
  return out;
}

template <typename Scalar>
LwtaOutput<Scalar> lwta_conv_forward(const LwtaConvLayer<Scalar>& layer, const BasicTensor<Scalar>& x,
                                     GumbelSource<Scalar> noise, std::optional<CompetitionMode> mode) {
  layer.validate();
  if (x.rank() != 4 || x.dim(1) != layer.channels()) {
    throw DimensionError("LWTA conv layer expects [n x " + std::to_string(layer.channels()) +
                         " x H x W] input, got " + to_string(x.shape()));
  }
  const ConvGeometry geo = layer.geometry();
  geo.validate(x.dim(2), x.dim(3));
  const Index n = x.dim(0), oh = geo.out_h(x.dim(2)), ow = geo.out_w(x.dim(3));
  const Index out_maps = layer.width();
  const Index patch = layer.weight.size() / out_maps;

  auto cols = im2col(x, geo);
  auto h = matmul(cols, transpose(reshape(layer.weight, {out_maps, patch})));
  if (layer.bias.defined()) h = add_broadcast(h, layer.bias);
  auto logits = permute(reshape(h, {n, oh, ow, layer.blocks, layer.competitors}), {0, 3, 1, 2, 4});

  LwtaOutput<Scalar> out;
  out.sample = compete(logits, mode.value_or(layer.mode), layer.temperature, noise);
  auto gated = permute(mul(out.sample.gate, logits), {0, 1, 4, 2, 3});
  out.output = reshape(gated, {n, out_maps, oh, ow});
  return out;
}

template <typename Scalar>
double active_fraction(const WinnerSample<Scalar>& sample) {
  if (sample.xi.size() == 0) return 0.0;
  return sample.xi.template cast<double>().sum() / static_cast<double>(sample.xi.size());
}

#define LWTA_INSTANTIATE_LAYERS(S)                                                                          \
  template struct WinnerSample<S>;                                                                          \
  template class GumbelSource<S>;                                                                           \
  template struct LwtaDenseLayer<S>;                                                                        \
  template struct LwtaConvLayer<S>;                                                                         \
  template WinnerSample<S> sample_gumbel_softmax_st(const BasicTensor<S>&, S, GumbelSource<S>);             \
  template WinnerSample<S> select_argmax_winners(const BasicTensor<S>&);                                    \
  template LwtaOutput<S> lwta_dense_forward(const LwtaDenseLayer<S>&, const BasicTensor<S>&,                \
                                            GumbelSource<S>, std::optional<CompetitionMode>);               \
  template LwtaOutput<S> lwta_conv_forward(const LwtaConvLayer<S>&, const BasicTensor<S>&, GumbelSource<S>, \
                                           std::optional<CompetitionMode>);                                 \
  template void init_weights(LwtaDenseLayer<S>&, Rng&);                                                     \
  template void init_weights(LwtaConvLayer<S>&, Rng&);                                                      \
  template Array<S> uniform_fan_in(Index, Index, Rng&);                                                     \
  template double active_fraction(const WinnerSample<S>&);

LWTA_INSTANTIATE_LAYERS(float)
LWTA_INSTANTIATE_LAYERS(double)

#undef LWTA_INSTANTIATE_LAYERS

}  // namespace lwta
