#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lwta/config.hpp"
#include "lwta/layers.hpp"

namespace lwta {

enum class ModelKind { mlp, conv, encoder };
enum class TapKind { dense_output, class_token, conv_spatial };

std::string to_string(ModelKind kind);
std::string to_string(TapKind kind);
std::string to_string(CompetitionMode mode);
ModelKind parse_model_kind(const std::string& text);
TapKind parse_tap_kind(const std::string& text);
CompetitionMode parse_competition_mode(const std::string& text);

/// Architecture description. Each hidden layer of width K is either conventional
/// (competitors == 1, ReLU for mlp/conv, GELU for the encoder MLP) or an LWTA layer
/// with B blocks of U competitors, B * U == K.
struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  Index input_dim = 2;  // mlp
  Index channels = 1;   // conv / encoder images
  Index height = 16;
  Index width = 16;
  /// mlp: hidden widths; conv: output channels per stage; encoder: MLP hidden width per block.
  std::vector<Index> widths{64};
  /// Competitors per layer; a single value applies to every layer.
  std::vector<Index> competitors{2};
  /// Optional explicit block counts, checked against widths / competitors.
  std::vector<Index> blocks;
  /// conv: stride per stage (single value broadcasts).
  std::vector<Index> strides{1};
  Index kernel = 3;
  Index classes = 2;
  // encoder
  Index patch = 4;
  Index dim = 64;
  Index depth = 2;
  double temperature = kDefaultTemperature;
  CompetitionMode mode = CompetitionMode::stochastic;

  Index layer_count() const;
  Index width_at(Index layer) const;
  Index competitors_at(Index layer) const;
  Index blocks_at(Index layer) const;
  Index stride_at(Index layer) const;
  bool is_lwta(Index layer) const { return competitors_at(layer) > 1; }
  Index lwta_layer_count() const;
  /// Per-example input shape expected by the model.
  Shape input_shape() const;

  /// Raises SpecError on any inconsistency, including B * U != width.
  void validate() const;

  static ModelSpec from_config(const Config& config);
  Config to_config() const;
};

struct LayerTap {
  std::string layer;
  TapKind kind = TapKind::dense_output;
};

struct TapPoint {
  std::string layer;
  TapKind kind;
  Index width;        // units (dense / class token) or feature maps (conv)
  Index competitors;  // 1 for conventional layers and the head
};

/// Values recorded at a tap during one forward pass.
struct LayerCapture {
  LayerTap tap;
  /// [n x K] for dense_output / class_token, [n x K x H' x W'] for conv_spatial.
  Shape shape;
  Array<float> values;
  /// Structural winner mask in the same layout; empty for non-competitive layers.
  Array<float> active;
};

struct ForwardOptions {
  Rng* rng = nullptr;
  std::optional<CompetitionMode> mode;
};

struct ForwardResult {
  Tensor logits;
  /// One per LWTA layer, in forward order.
  std::vector<WinnerSample<float>> samples;
  std::vector<LayerCapture> captures;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  const ModelSpec& spec() const { return spec_; }
  const std::vector<NamedTensor>& parameters() const { return parameters_; }
  std::vector<Tensor> parameter_tensors() const;
  Index parameter_count() const;

  std::vector<TapPoint> tap_points() const;
  std::vector<std::string> lwta_layer_names() const;
  const TapPoint& tap_point(const std::string& layer) const;

  /// Encoder only: the token sequence [n x (T + 1) x d] fed to the first block.
  Tensor embed_tokens(const Tensor& images) const;

  friend Model build_model(const ModelSpec& spec, Rng& rng);
  friend ForwardResult forward_with_taps(const Model& model, const Tensor& x, std::span<const LayerTap> taps,
                                         const ForwardOptions& options);

 private:
  struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
  };
  struct Conv {
    LwtaConvLayer<float> layer;  // competitors == 1 marks a conventional ReLU stage
  };
  struct Dense {
    LwtaDenseLayer<float> layer;  // competitors == 1 marks a conventional stage
  };
  struct EncoderBlock {
    Tensor ln1_gain, ln1_shift, query, key, value;
    Linear attn_out;
    Tensor ln2_gain, ln2_shift;
    Dense mlp_in;
    Linear mlp_out;
  };

  Linear make_linear(const std::string& name, Index in, Index out, Rng& rng);
  Tensor make_param(const std::string& name, Shape shape, Array<float> values);
  Tensor forward_encoder_block(const EncoderBlock& block, const Tensor& z, Index layer, const ForwardOptions& options,
                               ForwardResult& result, std::span<const LayerTap> taps) const;

  ModelSpec spec_;
  std::vector<NamedTensor> parameters_;
  std::vector<Dense> dense_;
  std::vector<Conv> conv_;
  Linear patch_embed_;
  Tensor class_token_;
  Tensor positions_;
  std::vector<EncoderBlock> blocks_;
  Tensor final_gain_, final_shift_;
  Linear head_;
};

Model build_model(const ModelSpec& spec, Rng& rng);

/// Runs the model on x (mlp: [n x J]; conv / encoder: [n x C x H x W]) and records the
/// requested taps. Unknown taps raise TapError. Stochastic competition needs options.rng.
ForwardResult forward_with_taps(const Model& model, const Tensor& x, std::span<const LayerTap> taps,
                                const ForwardOptions& options);

inline ForwardResult forward(const Model& model, const Tensor& x, const ForwardOptions& options) {
  return forward_with_taps(model, x, {}, options);
}

}  // namespace lwta
