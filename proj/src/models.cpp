#include "lwta/models.hpp"

#include <cmath>
#include <sstream>

#include "lwta/errors.hpp"

namespace lwta {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::conv: return "conv";
    case ModelKind::encoder: return "encoder";
  }
  return "?";
}

std::string to_string(TapKind kind) {
  switch (kind) {
    case TapKind::dense_output: return "dense_output";
    case TapKind::class_token: return "class_token";
    case TapKind::conv_spatial: return "conv_spatial";
  }
  return "?";
}

std::string to_string(CompetitionMode mode) {
  return mode == CompetitionMode::stochastic ? "stochastic" : "deterministic";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "mlp") return ModelKind::mlp;
  if (text == "conv") return ModelKind::conv;
  if (text == "encoder") return ModelKind::encoder;
  throw SpecError("unknown model kind '" + text + "' (expected mlp, conv or encoder)");
}

TapKind parse_tap_kind(const std::string& text) {
  if (text == "dense_output") return TapKind::dense_output;
  if (text == "class_token") return TapKind::class_token;
  if (text == "conv_spatial") return TapKind::conv_spatial;
  throw TapError("unknown tap kind '" + text + "'");
}

CompetitionMode parse_competition_mode(const std::string& text) {
  if (text == "stochastic") return CompetitionMode::stochastic;
  if (text == "deterministic") return CompetitionMode::deterministic;
  throw ParameterError("unknown competition mode '" + text + "' (expected stochastic or deterministic)");
}

// ---------------------------------------------------------------------------------------------
// ModelSpec

namespace {

Index pick(const std::vector<Index>& values, Index layer, const char* what) {
  if (values.empty()) throw SpecError(std::string("model spec: ") + what + " is empty");
  if (values.size() == 1) return values.front();
  if (layer < 0 || layer >= static_cast<Index>(values.size())) {
    throw SpecError(std::string("model spec: no ") + what + " entry for layer " + std::to_string(layer));
  }
  return values[static_cast<std::size_t>(layer)];
}

std::string join(const std::vector<Index>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

std::vector<Index> to_index(const std::vector<long>& values) { return {values.begin(), values.end()}; }
std::vector<long> to_long(const std::vector<Index>& values) { return {values.begin(), values.end()}; }

}  // namespace

Index ModelSpec::layer_count() const {
  if (kind == ModelKind::encoder) return depth;
  return static_cast<Index>(widths.size());
}

Index ModelSpec::width_at(Index layer) const { return pick(widths, layer, "widths"); }
Index ModelSpec::competitors_at(Index layer) const { return pick(competitors, layer, "competitors"); }
Index ModelSpec::stride_at(Index layer) const { return pick(strides, layer, "strides"); }

Index ModelSpec::blocks_at(Index layer) const {
  if (blocks.empty()) return width_at(layer) / competitors_at(layer);
  return pick(blocks, layer, "blocks");
}

Index ModelSpec::lwta_layer_count() const {
  Index count = 0;
  for (Index l = 0; l < layer_count(); ++l) count += is_lwta(l) ? 1 : 0;
  return count;
}

Shape ModelSpec::input_shape() const {
  if (kind == ModelKind::mlp) return {input_dim};
  return {channels, height, width};
}

void ModelSpec::validate() const {
  const Index layers = layer_count();
  auto check_list = [&](const std::vector<Index>& v, const char* what, bool allow_empty) {
    if (v.empty() && allow_empty) return;
    if (v.size() != 1 && static_cast<Index>(v.size()) != layers) {
      throw SpecError(std::string("model spec: ") + what + " must have 1 or " + std::to_string(layers) + " entries");
    }
    for (Index x : v) {
      if (x < 1) throw SpecError(std::string("model spec: ") + what + " entries must be positive");
    }
  };
  if (classes < 2) throw SpecError("model spec: need at least two classes");
  if (!(temperature > 0.0)) throw SpecError("model spec: temperature must be positive");
  if (kind != ModelKind::encoder && widths.empty()) throw SpecError("model spec: no hidden layers");
  if (kind == ModelKind::encoder) {
    if (depth < 0) throw SpecError("model spec: negative encoder depth");
    if (widths.empty()) throw SpecError("model spec: encoder needs an MLP hidden width");
  }
  check_list(widths, "widths", false);
  check_list(competitors, "competitors", false);
  check_list(blocks, "blocks", true);
  if (kind == ModelKind::conv) check_list(strides, "strides", false);

  for (Index l = 0; l < layers; ++l) {
    const Index k = width_at(l), u = competitors_at(l);
    if (k % u != 0) {
      throw SpecError("model spec: layer " + std::to_string(l) + " width " + std::to_string(k) +
                      " is not divisible by " + std::to_string(u) + " competitors");
    }
    if (!blocks.empty() && blocks_at(l) * u != k) {
      throw SpecError("model spec: layer " + std::to_string(l) + " has B*U = " + std::to_string(blocks_at(l)) + "*" +
                      std::to_string(u) + " = " + std::to_string(blocks_at(l) * u) + ", expected width " +
                      std::to_string(k));
    }
  }

  switch (kind) {
    case ModelKind::mlp:
      if (input_dim < 1) throw SpecError("model spec: input_dim must be positive");
      break;
    case ModelKind::conv: {
      if (channels < 1 || height < 1 || width < 1 || kernel < 1) throw SpecError("model spec: bad conv geometry");
      Index h = height, w = width;
      for (Index l = 0; l < layers; ++l) {
        const ConvGeometry geo{kernel, kernel, stride_at(l), kernel / 2};
        if (h + 2 * geo.padding < kernel || w + 2 * geo.padding < kernel) {
          throw SpecError("model spec: conv stage " + std::to_string(l) + " does not fit its input");
        }
        h = geo.out_h(h);
        w = geo.out_w(w);
      }
      break;
    }
    case ModelKind::encoder:
      if (channels < 1 || patch < 1 || dim < 1) throw SpecError("model spec: bad encoder geometry");
      if (height % patch != 0 || width % patch != 0) {
        throw SpecError("model spec: image size must be a multiple of the patch size");
      }
      break;
  }
}

ModelSpec ModelSpec::from_config(const Config& config) {
  ModelSpec spec;
  spec.kind = parse_model_kind(config.get_string("model.kind", "mlp"));
  spec.input_dim = config.get_int("model.input_dim", spec.input_dim);
  spec.channels = config.get_int("model.channels", spec.channels);
  spec.height = config.get_int("model.height", spec.height);
  spec.width = config.get_int("model.width", spec.width);
  spec.widths = to_index(config.get_int_list("model.widths", to_long(spec.widths)));
  spec.competitors = to_index(config.get_int_list("model.competitors", to_long(spec.competitors)));
  spec.blocks = to_index(config.get_int_list("model.blocks", {}));
  spec.strides = to_index(config.get_int_list("model.strides", to_long(spec.strides)));
  spec.kernel = config.get_int("model.kernel", spec.kernel);
  spec.classes = config.get_int("model.classes", spec.classes);
  spec.patch = config.get_int("model.patch", spec.patch);
  spec.dim = config.get_int("model.dim", spec.dim);
  spec.depth = config.get_int("model.depth", spec.depth);
  spec.temperature = config.get_double("model.temperature", spec.temperature);
  spec.mode = parse_competition_mode(config.get_string("model.mode", "stochastic"));
  return spec;
}

Config ModelSpec::to_config() const {
  Config c;
  auto num = [](double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
  };
  c.set("model.kind", to_string(kind));
  c.set("model.input_dim", std::to_string(input_dim));
  c.set("model.channels", std::to_string(channels));
  c.set("model.height", std::to_string(height));
  c.set("model.width", std::to_string(width));
  c.set("model.widths", join(widths));
  c.set("model.competitors", join(competitors));
  if (!blocks.empty()) c.set("model.blocks", join(blocks));
  c.set("model.strides", join(strides));
  c.set("model.kernel", std::to_string(kernel));
  c.set("model.classes", std::to_string(classes));
  c.set("model.patch", std::to_string(patch));
  c.set("model.dim", std::to_string(dim));
  c.set("model.depth", std::to_string(depth));
  c.set("model.temperature", num(temperature));
  c.set("model.mode", to_string(mode));
  return c;
}

// ---------------------------------------------------------------------------------------------
// Model construction

Tensor Model::make_param(const std::string& name, Shape shape, Array<float> values) {
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  parameters_.push_back({name, t});
  return t;
}

Model::Linear Model::make_linear(const std::string& name, Index in, Index out, Rng& rng) {
  Linear linear;
  linear.weight = make_param(name + ".weight", {in, out}, uniform_fan_in<float>(in * out, in, rng));
  linear.bias = make_param(name + ".bias", {out}, Array<float>::Zero(out));
  return linear;
}

Model build_model(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  Model model;
  model.spec_ = spec;
  const auto tau = static_cast<float>(spec.temperature);

  auto make_dense = [&](const std::string& name, Index in, Index layer) {
    Model::Dense dense;
    auto& l = dense.layer;
    l.competitors = spec.competitors_at(layer);
    l.blocks = spec.width_at(layer) / l.competitors;
    l.temperature = tau;
    l.mode = spec.mode;
    const Index k = spec.width_at(layer);
    l.weight = model.make_param(name + ".weight", {in, k}, uniform_fan_in<float>(in * k, in, rng));
    l.bias = model.make_param(name + ".bias", {k}, Array<float>::Zero(k));
    return dense;
  };

  switch (spec.kind) {
    case ModelKind::mlp: {
      Index in = spec.input_dim;
      for (Index l = 0; l < spec.layer_count(); ++l) {
        model.dense_.push_back(make_dense("hidden" + std::to_string(l), in, l));
        in = spec.width_at(l);
      }
      model.head_ = model.make_linear("head", in, spec.classes, rng);
      break;
    }
    case ModelKind::conv: {
      Index c = spec.channels, h = spec.height, w = spec.width;
      for (Index l = 0; l < spec.layer_count(); ++l) {
        const std::string name = "conv" + std::to_string(l);
        Model::Conv conv;
        auto& layer = conv.layer;
        layer.competitors = spec.competitors_at(l);
        layer.blocks = spec.width_at(l) / layer.competitors;
        layer.stride = spec.stride_at(l);
        layer.padding = spec.kernel / 2;
        layer.temperature = tau;
        layer.mode = spec.mode;
        const Index out = spec.width_at(l), fan_in = c * spec.kernel * spec.kernel;
        layer.weight = model.make_param(name + ".weight", {out, c, spec.kernel, spec.kernel},
                                        uniform_fan_in<float>(out * fan_in, fan_in, rng));
        layer.bias = model.make_param(name + ".bias", {out}, Array<float>::Zero(out));
        const ConvGeometry geo = layer.geometry();
        h = geo.out_h(h);
        w = geo.out_w(w);
        c = out;
        model.conv_.push_back(std::move(conv));
      }
      model.head_ = model.make_linear("head", c * h * w, spec.classes, rng);
      break;
    }
    case ModelKind::encoder: {
      const Index d = spec.dim;
      const Index tokens = (spec.height / spec.patch) * (spec.width / spec.patch);
      model.patch_embed_ = model.make_linear("embed", spec.channels * spec.patch * spec.patch, d, rng);
      model.class_token_ = model.make_param("class_token", {d}, uniform_fan_in<float>(d, d, rng));
      model.positions_ = model.make_param("positions", {tokens + 1, d}, uniform_fan_in<float>((tokens + 1) * d, d, rng));
      for (Index l = 0; l < spec.depth; ++l) {
        const std::string name = "block" + std::to_string(l);
        Model::EncoderBlock block;
        block.ln1_gain = model.make_param(name + ".ln1.gain", {d}, Array<float>::Ones(d));
        block.ln1_shift = model.make_param(name + ".ln1.shift", {d}, Array<float>::Zero(d));
        block.query = model.make_param(name + ".attn.query", {d, d}, uniform_fan_in<float>(d * d, d, rng));
        block.key = model.make_param(name + ".attn.key", {d, d}, uniform_fan_in<float>(d * d, d, rng));
        block.value = model.make_param(name + ".attn.value", {d, d}, uniform_fan_in<float>(d * d, d, rng));
        block.attn_out = model.make_linear(name + ".attn.out", d, d, rng);
        block.ln2_gain = model.make_param(name + ".ln2.gain", {d}, Array<float>::Ones(d));
        block.ln2_shift = model.make_param(name + ".ln2.shift", {d}, Array<float>::Zero(d));
        block.mlp_in = make_dense(name + ".mlp.in", d, l);
        block.mlp_out = model.make_linear(name + ".mlp.out", spec.width_at(l), d, rng);
        model.blocks_.push_back(std::move(block));
      }
      model.final_gain_ = model.make_param("final.gain", {d}, Array<float>::Ones(d));
      model.final_shift_ = model.make_param("final.shift", {d}, Array<float>::Zero(d));
      model.head_ = model.make_linear("head", d, spec.classes, rng);
      break;
    }
  }
  return model;
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(parameters_.size());
  for (const auto& p : parameters_) out.push_back(p.tensor);
  return out;
}

Index Model::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters_) n += p.tensor.size();
  return n;
}

std::vector<TapPoint> Model::tap_points() const {
  std::vector<TapPoint> points;
  const auto prefix = spec_.kind == ModelKind::mlp ? "hidden" : spec_.kind == ModelKind::conv ? "conv" : "block";
  const TapKind kind = spec_.kind == ModelKind::mlp    ? TapKind::dense_output
                       : spec_.kind == ModelKind::conv ? TapKind::conv_spatial
                                                       : TapKind::class_token;
  for (Index l = 0; l < spec_.layer_count(); ++l) {
    points.push_back({prefix + std::to_string(l), kind, spec_.width_at(l), spec_.competitors_at(l)});
  }
  points.push_back({"head", TapKind::dense_output, spec_.classes, 1});
  return points;
}

std::vector<std::string> Model::lwta_layer_names() const {
  std::vector<std::string> names;
  for (const auto& p : tap_points()) {
    if (p.competitors > 1) names.push_back(p.layer);
  }
  return names;
}

const TapPoint& Model::tap_point(const std::string& layer) const {
  static thread_local std::vector<TapPoint> cache;
  cache = tap_points();
  for (const auto& p : cache) {
    if (p.layer == layer) return p;
  }
  std::string known;
  for (const auto& p : cache) known += (known.empty() ? "" : ", ") + p.layer;
  throw TapError("unknown layer '" + layer + "' (available: " + known + ")");
}

// ---------------------------------------------------------------------------------------------
// Forward

namespace {

LwtaOutput<float> run_dense(const LwtaDenseLayer<float>& layer, const Tensor& x, const ForwardOptions& options) {
  const CompetitionMode mode = options.mode.value_or(layer.mode);
  if (mode == CompetitionMode::deterministic) {
    Rng unused;
    return lwta_dense_forward(layer, x, GumbelSource<float>(unused), mode);
  }
  if (options.rng == nullptr) throw ParameterError("stochastic forward pass needs a random stream");
  return lwta_dense_forward(layer, x, GumbelSource<float>(*options.rng), mode);
}

LwtaOutput<float> run_conv(const LwtaConvLayer<float>& layer, const Tensor& x, const ForwardOptions& options) {
  const CompetitionMode mode = options.mode.value_or(layer.mode);
  if (mode == CompetitionMode::deterministic) {
    Rng unused;
    return lwta_conv_forward(layer, x, GumbelSource<float>(unused), mode);
  }
  if (options.rng == nullptr) throw ParameterError("stochastic forward pass needs a random stream");
  return lwta_conv_forward(layer, x, GumbelSource<float>(*options.rng), mode);
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_broadcast(matmul(x, weight), bias);
}

/// Index of the tap requesting (layer, kind), or -1.
Index find_tap(std::span<const LayerTap> taps, const std::string& layer, TapKind kind) {
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i].layer == layer && taps[i].kind == kind) return static_cast<Index>(i);
  }
  return -1;
}

}  // namespace

Tensor Model::embed_tokens(const Tensor& images) const {
  if (spec_.kind != ModelKind::encoder) throw SpecError("embed_tokens is only defined for encoder models");
  const Index n = images.dim(0), d = spec_.dim;
  const Index tokens = (spec_.height / spec_.patch) * (spec_.width / spec_.patch);
  const ConvGeometry patches{spec_.patch, spec_.patch, spec_.patch, 0};
  auto embedded = reshape(affine(im2col(images, patches), patch_embed_.weight, patch_embed_.bias), {n, tokens, d});
  auto cls = repeat_leading(reshape(class_token_, {1, d}), n);
  return add_broadcast(concat(cls, embedded, 1), positions_);
}

Tensor Model::forward_encoder_block(const EncoderBlock& block, const Tensor& z, Index layer,
                                    const ForwardOptions& options, ForwardResult& result,
                                    std::span<const LayerTap> taps) const {
  const Index n = z.dim(0), t = z.dim(1), d = z.dim(2);
  const auto flat = [&](const Tensor& v) { return reshape(v, {n * t, v.dim(-1)}); };

  auto a = flat(layer_norm(z, block.ln1_gain, block.ln1_shift));
  auto q = reshape(matmul(a, block.query), {n, t, d});
  auto k = reshape(matmul(a, block.key), {n, t, d});
  auto v = reshape(matmul(a, block.value), {n, t, d});
  auto scores = scale(bmm(q, permute(k, {0, 2, 1})), 1.0f / std::sqrt(static_cast<float>(d)));
  auto context = flat(bmm(softmax(scores), v));
  auto x = add(z, reshape(affine(context, block.attn_out.weight, block.attn_out.bias), {n, t, d}));

  auto m = flat(layer_norm(x, block.ln2_gain, block.ln2_shift));
  const auto& lw = block.mlp_in.layer;
  Tensor hidden;
  Array<float> winners;
  if (lw.competitors > 1) {
    auto out = run_dense(lw, m, options);
    hidden = out.output;
    winners = out.sample.xi;
    result.samples.push_back(std::move(out.sample));
  } else {
    hidden = gelu(affine(m, lw.weight, lw.bias));
  }

  const std::string name = "block" + std::to_string(layer);
  const Index tap = find_tap(taps, name, TapKind::class_token);
  if (tap >= 0) {
    const Index width = hidden.dim(1);
    LayerCapture capture{taps[static_cast<std::size_t>(tap)], {n, width}, Array<float>(n * width), {}};
    if (winners.size() > 0) capture.active.resize(n * width);
    for (Index i = 0; i < n; ++i) {
      capture.values.segment(i * width, width) = hidden.data().segment(i * t * width, width);
      if (winners.size() > 0) capture.active.segment(i * width, width) = winners.segment(i * t * width, width);
    }
    result.captures[static_cast<std::size_t>(tap)] = std::move(capture);
  }

  auto mlp = reshape(affine(hidden, block.mlp_out.weight, block.mlp_out.bias), {n, t, d});
  return add(x, mlp);
}

ForwardResult forward_with_taps(const Model& model, const Tensor& x, std::span<const LayerTap> taps,
                                const ForwardOptions& options) {
  const ModelSpec& spec = model.spec_;
  const auto points = model.tap_points();
  for (const auto& tap : taps) {
    bool found = false;
    for (const auto& p : points) found = found || (p.layer == tap.layer && p.kind == tap.kind);
    if (!found) {
      throw TapError("model has no " + to_string(tap.kind) + " tap at layer '" + tap.layer + "'");
    }
  }

  Shape expected{x.shape().empty() ? 0 : x.dim(0)};
  for (Index d : spec.input_shape()) expected.push_back(d);
  if (x.shape() != expected) {
    throw DimensionError("model expects input " + to_string(expected) + ", got " + to_string(x.shape()));
  }

  ForwardResult result;
  result.captures.resize(taps.size());
  auto record = [&](const std::string& layer, TapKind kind, const Tensor& value, const Array<float>* active) {
    const Index tap = find_tap(taps, layer, kind);
    if (tap < 0) return;
    LayerCapture capture{taps[static_cast<std::size_t>(tap)], value.shape(), value.data(), {}};
    if (active != nullptr) capture.active = *active;
    result.captures[static_cast<std::size_t>(tap)] = std::move(capture);
  };

  Tensor h = x;
  switch (spec.kind) {
    case ModelKind::mlp:
      for (std::size_t l = 0; l < model.dense_.size(); ++l) {
        const auto& layer = model.dense_[l].layer;
        const std::string name = "hidden" + std::to_string(l);
        if (layer.competitors > 1) {
          auto out = run_dense(layer, h, options);
          h = out.output;
          record(name, TapKind::dense_output, h, &out.sample.xi);
          result.samples.push_back(std::move(out.sample));
        } else {
          h = relu(affine(h, layer.weight, layer.bias));
          record(name, TapKind::dense_output, h, nullptr);
        }
      }
      break;
    case ModelKind::conv:
      for (std::size_t l = 0; l < model.conv_.size(); ++l) {
        const auto& layer = model.conv_[l].layer;
        const std::string name = "conv" + std::to_string(l);
        if (layer.competitors > 1) {
          auto out = run_conv(layer, h, options);
          h = out.output;
          // xi is [n x B x H' x W' x U]; captures use the output layout [n x B*U x H' x W'].
          const Array<float> active =
              permute(Tensor::constant(out.sample.shape, out.sample.xi), {0, 1, 4, 2, 3}).data();
          record(name, TapKind::conv_spatial, h, &active);
          result.samples.push_back(std::move(out.sample));
        } else {
          const Index n = h.dim(0), oh = layer.geometry().out_h(h.dim(2)), ow = layer.geometry().out_w(h.dim(3));
          const Index maps = layer.width();
          auto cols = im2col(h, layer.geometry());
          auto lin = affine(cols, transpose(reshape(layer.weight, {maps, layer.weight.size() / maps})), layer.bias);
          h = relu(reshape(permute(reshape(lin, {n, oh, ow, maps}), {0, 3, 1, 2}), {n, maps, oh, ow}));
          record(name, TapKind::conv_spatial, h, nullptr);
        }
      }
      h = reshape(h, {h.dim(0), h.size() / h.dim(0)});
      break;
    case ModelKind::encoder: {
      Tensor z = model.embed_tokens(x);
      for (std::size_t l = 0; l < model.blocks_.size(); ++l) {
        z = model.forward_encoder_block(model.blocks_[l], z, static_cast<Index>(l), options, result, taps);
      }
      h = select(layer_norm(z, model.final_gain_, model.final_shift_), 1, 0);
      break;
    }
  }
  result.logits = affine(h, model.head_.weight, model.head_.bias);
  record("head", TapKind::dense_output, result.logits, nullptr);
  return result;
}

}  // namespace lwta
