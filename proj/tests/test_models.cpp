#include <gtest/gtest.h>

#include "lwta/errors.hpp"
#include "lwta/models.hpp"

namespace lwta {
namespace {

Tensor random_images(Index n, const ModelSpec& spec, Rng& rng) {
  Shape shape{n};
  for (Index d : spec.input_shape()) shape.push_back(d);
  Array<float> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = static_cast<float>(rng.normal());
  return Tensor::constant(shape, v);
}

ModelSpec encoder_spec(Index competitors) {
  ModelSpec spec;
  spec.kind = ModelKind::encoder;
  spec.height = spec.width = 8;
  spec.patch = 4;
  spec.dim = 32;
  spec.depth = 2;
  spec.widths = {64};
  spec.competitors = {competitors};
  spec.classes = 5;
  return spec;
}

TEST(ModelSpec, RejectsBlockCompetitorMismatch) {
  ModelSpec spec;
  spec.widths = {64};
  spec.competitors = {2};
  spec.blocks = {31};
  EXPECT_THROW(spec.validate(), SpecError);
  spec.blocks = {32};
  EXPECT_NO_THROW(spec.validate());
  spec.competitors = {3};
  spec.blocks = {};
  EXPECT_THROW(spec.validate(), SpecError);
}

TEST(ModelSpec, ConfigRoundTrip) {
  ModelSpec spec = encoder_spec(4);
  spec.mode = CompetitionMode::deterministic;
  const ModelSpec back = ModelSpec::from_config(spec.to_config());
  EXPECT_EQ(back.to_config().to_text(), spec.to_config().to_text());
}

TEST(Models, LwtaMlpHasConventionalParameterCount) {
  Rng rng(1);
  ModelSpec lwta;
  lwta.widths = {64};
  lwta.competitors = {2};
  lwta.blocks = {32};
  ModelSpec plain = lwta;
  plain.competitors = {1};
  plain.blocks = {};
  const Model a = build_model(lwta, rng);
  const Model b = build_model(plain, rng);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_EQ(a.parameter_count(), 2 * 64 + 64 + 64 * 2 + 2);
}

TEST(Models, ParameterParityForConvAndEncoder) {
  Rng rng(2);
  ModelSpec conv;
  conv.kind = ModelKind::conv;
  conv.widths = {8, 16};
  conv.strides = {1, 2};
  conv.classes = 10;
  ModelSpec plain = conv;
  plain.competitors = {1};
  EXPECT_EQ(build_model(conv, rng).parameter_count(), build_model(plain, rng).parameter_count());
  EXPECT_EQ(build_model(encoder_spec(16), rng).parameter_count(), build_model(encoder_spec(1), rng).parameter_count());
}

TEST(Models, ForwardShapes) {
  Rng rng(3);
  for (auto kind : {ModelKind::mlp, ModelKind::conv, ModelKind::encoder}) {
    ModelSpec spec = kind == ModelKind::encoder ? encoder_spec(2) : ModelSpec{};
    spec.kind = kind;
    if (kind == ModelKind::conv) {
      spec.height = spec.width = 8;
      spec.widths = {4};
    }
    const Model model = build_model(spec, rng);
    const auto x = random_images(3, spec, rng);
    const auto result = forward(model, x, {&rng, std::nullopt});
    EXPECT_EQ(result.logits.shape(), (Shape{3, spec.classes})) << to_string(kind);
    EXPECT_EQ(static_cast<Index>(result.samples.size()), spec.lwta_layer_count());
  }
}

TEST(Models, EncoderTokenSequenceShape) {
  Rng rng(4);
  const ModelSpec spec = encoder_spec(2);
  const Model model = build_model(spec, rng);
  EXPECT_EQ(model.embed_tokens(random_images(2, spec, rng)).shape(), (Shape{2, 5, 32}));
}

TEST(Models, EncoderWithoutCompetitionIsConventional) {
  Rng rng(5);
  const ModelSpec spec = encoder_spec(1);
  const Model model = build_model(spec, rng);
  EXPECT_EQ(spec.lwta_layer_count(), 0);
  EXPECT_TRUE(model.lwta_layer_names().empty());
  const auto x = random_images(2, spec, rng);
  const auto a = forward(model, x, {nullptr, std::nullopt});
  const auto b = forward(model, x, {nullptr, std::nullopt});
  EXPECT_TRUE(a.samples.empty());
  EXPECT_TRUE((a.logits.data() == b.logits.data()).all());
}

TEST(Models, StochasticForwardNeedsRandomStream) {
  Rng rng(6);
  const Model model = build_model(ModelSpec{}, rng);
  const auto x = random_images(2, model.spec(), rng);
  EXPECT_THROW(forward(model, x, {nullptr, std::nullopt}), ParameterError);
  EXPECT_NO_THROW(forward(model, x, {nullptr, CompetitionMode::deterministic}));
}

TEST(Taps, ClassTokenCaptureHasOneWinnerPerBlock) {
  Rng rng(7);
  ModelSpec spec = encoder_spec(16);
  spec.widths = {64};
  const Model model = build_model(spec, rng);
  const auto x = random_images(10, spec, rng);
  const LayerTap taps[] = {{"block0", TapKind::class_token}, {"block1", TapKind::class_token}};
  const auto result = forward_with_taps(model, x, taps, {&rng, std::nullopt});
  ASSERT_EQ(result.captures.size(), 2u);
  for (const auto& capture : result.captures) {
    ASSERT_EQ(capture.shape, (Shape{10, 64}));
    for (Index i = 0; i < 10; ++i) {
      Index active = 0, nonzero = 0;
      for (Index k = 0; k < 64; ++k) {
        active += capture.active(i * 64 + k) > 0 ? 1 : 0;
        nonzero += capture.values(i * 64 + k) != 0.0f ? 1 : 0;
      }
      EXPECT_EQ(active, 4);
      EXPECT_LE(nonzero, 4);
    }
  }
}

TEST(Taps, ClassTokenOnlyOnEncoders) {
  Rng rng(8);
  const Model mlp = build_model(ModelSpec{}, rng);
  const auto x = random_images(2, mlp.spec(), rng);
  const LayerTap bad[] = {{"hidden0", TapKind::class_token}};
  EXPECT_THROW(forward_with_taps(mlp, x, bad, {&rng, std::nullopt}), TapError);
  const LayerTap missing[] = {{"hidden7", TapKind::dense_output}};
  EXPECT_THROW(forward_with_taps(mlp, x, missing, {&rng, std::nullopt}), TapError);
  EXPECT_THROW(mlp.tap_point("nope"), TapError);
}

TEST(Taps, DeterministicCapturesRepeat) {
  Rng rng(9);
  const ModelSpec spec = encoder_spec(4);
  const Model model = build_model(spec, rng);
  const auto x = random_images(3, spec, rng);
  const LayerTap taps[] = {{"block1", TapKind::class_token}};
  const ForwardOptions options{nullptr, CompetitionMode::deterministic};
  const auto a = forward_with_taps(model, x, taps, options);
  const auto b = forward_with_taps(model, x, taps, options);
  EXPECT_TRUE((a.captures[0].values == b.captures[0].values).all());
}

TEST(Taps, DenseTapEqualsLayerOutputSlice) {
  Rng rng(10);
  ModelSpec spec;
  spec.widths = {8, 6};
  spec.competitors = {2, 3};
  const Model model = build_model(spec, rng);
  const auto x = random_images(4, spec, rng);
  const LayerTap taps[] = {{"hidden1", TapKind::dense_output}, {"head", TapKind::dense_output}};
  const ForwardOptions options{nullptr, CompetitionMode::deterministic};
  const auto result = forward_with_taps(model, x, taps, options);
  EXPECT_TRUE((result.captures[1].values == result.logits.data()).all());
  // Instrumented recomputation of hidden1 from the stored parameters.
  const auto& p = model.parameters();
  auto h0 = add_broadcast(matmul(x, p[0].tensor), p[1].tensor);
  const auto s0 = select_argmax_winners(reshape(h0, {4, 4, 2}));
  h0 = mul(Tensor::constant({4, 8}, s0.xi), h0);
  auto h1 = add_broadcast(matmul(h0, p[2].tensor), p[3].tensor);
  const auto s1 = select_argmax_winners(reshape(h1, {4, 2, 3}));
  h1 = mul(Tensor::constant({4, 6}, s1.xi), h1);
  EXPECT_TRUE((result.captures[0].values == h1.data()).all());
  EXPECT_TRUE((result.captures[0].active == s1.xi).all());
}

TEST(Taps, ConvSpatialCaptureKeepsMaps) {
  Rng rng(11);
  ModelSpec spec;
  spec.kind = ModelKind::conv;
  spec.height = spec.width = 8;
  spec.widths = {6};
  spec.competitors = {3};
  spec.strides = {2};
  const Model model = build_model(spec, rng);
  const auto x = random_images(2, spec, rng);
  const LayerTap taps[] = {{"conv0", TapKind::conv_spatial}};
  const auto result = forward_with_taps(model, x, taps, {&rng, std::nullopt});
  const auto& c = result.captures[0];
  ASSERT_EQ(c.shape, (Shape{2, 6, 4, 4}));
  // At every position each block of three maps has exactly one winner.
  for (Index i = 0; i < 2; ++i) {
    for (Index s = 0; s < 16; ++s) {
      for (Index b = 0; b < 2; ++b) {
        float winners = 0;
        for (Index u = 0; u < 3; ++u) winners += c.active((i * 6 + b * 3 + u) * 16 + s);
        EXPECT_EQ(winners, 1.0f);
      }
    }
  }
}

}  // namespace
}  // namespace lwta
