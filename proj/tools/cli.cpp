#include "lwta/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <sstream>

#include "lwta/checkpoint.hpp"
#include "lwta/data.hpp"
#include "lwta/dissection.hpp"
#include "lwta/errors.hpp"
#include "lwta/io.hpp"
#include "lwta/metrics.hpp"
#include "lwta/train.hpp"

namespace lwta {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
  std::optional<std::string> mode;
  std::optional<std::string> sim;
  std::optional<long> samples;
};

/// Files produced by the running command; removed again if it fails.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, std::string_view bytes) {
    fs::create_directories(dir_);
    const fs::path target = path(name);
    written_.push_back(target);
    write_file_atomic(target, bytes);
  }

  void write_matrix_file(const std::string& name, const MatrixFile& matrix) { write(name, encode_matrix(matrix)); }

  void discard() {
    std::error_code ignored;
    for (const auto& p : written_) {
      fs::remove(p, ignored);
      auto temp = p;
      temp += ".tmp";
      fs::remove(temp, ignored);
    }
  }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
};

Config resolve_config(const CommonFlags& flags, std::ostream& err) {
  Config config = flags.config_path.empty() ? Config{} : Config::load(flags.config_path);
  for (const auto& assignment : flags.overrides) config.apply_override(assignment);
  if (flags.seed) config.set("seed", std::to_string(*flags.seed));
  if (!config.has("seed")) config.set("seed", "0");
  if (flags.mode) config.set("mode", *flags.mode);
  if (flags.sim) config.set("sim", *flags.sim);
  if (flags.samples) config.set("samples", std::to_string(*flags.samples));
  err << "resolved config:\n" << config.to_text() << "seed: " << config.get_string("seed", "0") << "\n";
  return config;
}

std::uint64_t seed_of(const Config& config) { return static_cast<std::uint64_t>(config.get_int("seed", 0)); }

std::string require_key(const Config& config, const std::string& key) {
  auto value = config.get(key);
  if (!value || value->empty()) throw ParameterError("missing required setting '" + key + "'");
  return *value;
}

/// Reshapes a probe matrix to [N, input_shape...] when the element counts agree.
Tensor probe_tensor(const MatrixFile& file, const ModelSpec& spec) {
  if (file.dims.empty()) throw DimensionError("probe matrix has rank 0");
  const auto n = static_cast<Index>(file.dims.front());
  Shape shape{n};
  for (Index d : spec.input_shape()) shape.push_back(d);
  if (static_cast<Index>(file.values.size()) != numel(shape)) {
    throw DimensionError("probe matrix of " + std::to_string(file.values.size()) + " values does not hold " +
                         std::to_string(n) + " inputs of shape " + to_string(spec.input_shape()));
  }
  Array<float> values = Eigen::Map<const Array<float>>(file.values.data(), static_cast<Index>(file.values.size()));
  return Tensor::constant(std::move(shape), std::move(values));
}

Dataset make_dataset(const Config& config, Rng& rng) {
  const std::string kind = config.get_string("data.kind", "two_moons");
  if (kind == "two_moons") {
    return make_two_moons(config.get_int("data.n", 2000), config.get_double("data.noise", 0.1), rng);
  }
  if (kind == "shapes") {
    return make_shapes(config.get_int("data.n", 2000), config.get_int("data.size", 16),
                       config.get_double("data.noise", 0.2), rng);
  }
  throw ParameterError("unknown data.kind '" + kind + "' (expected two_moons or shapes)");
}

/// Matches the dataset layout to the model input when only the layout differs.
void conform(Dataset& data, const ModelSpec& spec) {
  const Shape expected = spec.input_shape();
  if (data.sample_shape == expected) return;
  if (numel(data.sample_shape) != numel(expected)) {
    throw SpecError("model input " + to_string(expected) + " does not fit data samples " +
                    to_string(data.sample_shape));
  }
  data.sample_shape = expected;
}

LayerTap resolve_tap(const Model& model, const Config& config, const std::string& prefix) {
  std::string layer = config.get_string(prefix + ".layer", "");
  if (layer.empty()) {
    const auto names = model.lwta_layer_names();
    layer = names.empty() ? "head" : names.back();
  }
  const TapPoint& point = model.tap_point(layer);
  const std::string kind = config.get_string(prefix + ".tap", "");
  return {layer, kind.empty() ? point.kind : parse_tap_kind(kind)};
}

SimilarityParams similarity_params(const Config& config) {
  SimilarityParams params;
  params.lambda = config.get_double("lambda", params.lambda);
  if (config.has("top_k")) params.top_k = config.get_int("top_k", 1);
  params.temperature = config.get_double("temperature", params.temperature);
  return params;
}

ConceptActivationMatrix concept_matrix(const Config& config) {
  const auto concepts = load_concepts(require_key(config, "concepts"));
  return build_concept_matrix(to_matrix(read_matrix(require_key(config, "images"))),
                              to_matrix(read_matrix(require_key(config, "texts"))), concepts);
}

void write_descriptors(Outputs& outputs, const std::vector<NeuronDescriptor>& descriptors, std::ostream& out) {
  outputs.write("descriptors.csv", descriptors_to_csv(descriptors));
  out << "wrote " << descriptors.size() << " descriptors to " << outputs.path("descriptors.csv").string() << "\n";
}

void cmd_train(const Config& config, Outputs& outputs, std::ostream& out, std::ostream& err) {
  ModelSpec spec = ModelSpec::from_config(config);
  if (config.has("mode")) spec.mode = parse_competition_mode(config.get_string("mode", ""));
  spec.validate();
  TrainConfig train_config = TrainConfig::from_config(config);
  train_config.inference_samples = config.get_int("samples", train_config.inference_samples);
  train_config.checkpoint_path = outputs.path("model.ckpt");

  Rng root(seed_of(config));
  Rng data_rng = root.split();
  Rng init_rng = root.split();
  Rng eval_rng = root.split();
  Dataset data = make_dataset(config, data_rng);
  conform(data, spec);
  auto [train_set, test_set] = split_dataset(data, config.get_double("data.test_fraction", 0.2), data_rng);

  Model model = build_model(spec, init_rng);
  err << "model: " << to_string(spec.kind) << ", " << model.parameter_count() << " parameters, "
      << spec.lwta_layer_count() << " LWTA layers\n";
  const TrainingReport report = train(model, train_set, train_config);
  for (const auto& row : report.rows) {
    err << "epoch " << row.epoch << " loss " << row.loss << " acc " << row.accuracy << "\n";
  }
  outputs.write("model.ckpt", encode_checkpoint(model, {static_cast<std::uint64_t>(report.rows.size()), root.state()}));
  outputs.write("train_report.csv", report.to_csv());

  const double accuracy = evaluate_accuracy(model, test_set, train_config.inference_samples, eval_rng);
  std::ostringstream metrics;
  metrics.precision(9);
  metrics << "metric,value\ntest_accuracy," << accuracy << "\n";
  outputs.write("metrics.csv", metrics.str());
  out << "test accuracy: " << accuracy << "\n";
}

void cmd_dissect(const Config& config, Outputs& outputs, std::ostream& out) {
  const SimilarityKind kind = parse_similarity(config.get_string("sim", "softwpmi"));
  const Model model = load_model(require_key(config, "checkpoint"));
  const LayerTap tap = resolve_tap(model, config, "dissect");
  const Tensor probes = probe_tensor(read_matrix(require_key(config, "probes")), model.spec());
  const ConceptActivationMatrix p = concept_matrix(config);
  if (p.probes() != probes.dim(0)) {
    throw DimensionError(std::to_string(probes.dim(0)) + " probes but " + std::to_string(p.probes()) +
                         " image embeddings");
  }
  RecordOptions options;
  options.mode = parse_competition_mode(config.get_string("mode", "stochastic"));
  options.seed = seed_of(config);
  options.repeats = config.get_int("dissect.repeats", 1);
  const auto records = record_activations(model, probes, tap, options);
  const SimilarityFunction sim(kind, p.similarities, similarity_params(config));
  write_descriptors(outputs, match_neurons(records, p, sim), out);
}

void cmd_match(const Config& config, Outputs& outputs, std::ostream& out) {
  const SimilarityKind kind = parse_similarity(config.get_string("sim", "softwpmi"));
  const MatrixXd activations = to_matrix(read_matrix(require_key(config, "activations"))).cast<double>();
  const ConceptActivationMatrix p = concept_matrix(config);
  if (activations.rows() != p.probes()) {
    throw DimensionError("activation matrix has " + std::to_string(activations.rows()) + " rows, expected " +
                         std::to_string(p.probes()));
  }
  const auto records =
      records_from_matrix(config.get_string("match.layer", "layer"), activations, config.get_int("match.competitors", 1));
  const SimilarityFunction sim(kind, p.similarities, similarity_params(config));
  write_descriptors(outputs, match_neurons(records, p, sim), out);
}

void cmd_eval(const Config& config, Outputs& outputs, std::ostream& out) {
  const auto all = descriptors_from_csv(read_file(require_key(config, "descriptors")));
  const std::string layer = config.get_string("eval.layer", "head");
  std::vector<NeuronDescriptor> head;
  for (const auto& d : all) {
    if (d.neuron.layer == layer) head.push_back(d);
  }
  if (head.empty()) throw MetricError("no descriptors for layer '" + layer + "'");
  const auto classes = load_concepts(require_key(config, "classes"));
  const auto concepts = load_concepts(require_key(config, "concepts"));

  std::ostringstream metrics;
  metrics.precision(9);
  metrics << "metric,value\n";
  const double accuracy = identification_accuracy(head, classes, concepts);
  metrics << "identification_accuracy," << accuracy << "\n";
  out << "identification accuracy: " << accuracy << "\n";
  if (config.has("texts")) {
    const auto table = embedding_table(concepts, to_matrix(read_matrix(require_key(config, "texts"))));
    const double similarity = description_similarity_score(head, classes, table);
    metrics << "description_similarity," << similarity << "\n";
    out << "description similarity: " << similarity << "\n";
  }
  outputs.write("metrics.csv", metrics.str());
}

void cmd_report(const Config& config, Outputs& outputs, std::ostream& out) {
  const Model model = load_model(require_key(config, "checkpoint"));
  const LayerTap tap = resolve_tap(model, config, "report");
  const auto descriptors = descriptors_from_csv(read_file(require_key(config, "descriptors")));
  const Tensor probes = probe_tensor(read_matrix(require_key(config, "probes")), model.spec());
  const long index = config.get_int("report.index", 0);
  if (index < 0 || index >= probes.dim(0)) {
    throw IndexError("probe index " + std::to_string(index) + " outside [0, " + std::to_string(probes.dim(0)) + ")");
  }
  const Index per_example = probes.size() / probes.dim(0);
  Shape shape = probes.shape();
  shape[0] = 1;
  const Tensor x = Tensor::constant(shape, probes.data().segment(index * per_example, per_example));

  RecordOptions options;
  options.mode = parse_competition_mode(config.get_string("mode", "deterministic"));
  options.seed = seed_of(config);
  const auto report = per_example_report(model, x, tap, descriptors, config.get_int("report.k_top", 7),
                                         config.get_int("report.k_bottom", 6), options);
  outputs.write("report.txt", report.to_text());
  outputs.write("report.csv", report.to_csv());
  out << report.to_text();
}

/// Toy fixture: a probe set with class-clustered image embeddings and one-hot text embeddings
/// whose concepts are the class names, so the pipeline can run without an external encoder.
void cmd_synth(const Config& config, Outputs& outputs, std::ostream& out) {
  Rng rng(seed_of(config));
  Dataset data = make_dataset(config, rng);
  const bool shapes = config.get_string("data.kind", "two_moons") == "shapes";
  std::vector<std::string> classes;
  if (shapes) {
    classes = shape_class_names();
  } else {
    classes = {"upper moon", "lower moon"};
  }
  const auto c = static_cast<Index>(classes.size());
  const Index dim = std::max<Index>(c, config.get_int("synth.dim", 16));
  const double spread = config.get_double("synth.spread", 0.1);

  RowMatrix<float> images(data.size(), dim), texts = RowMatrix<float>::Zero(c, dim);
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < dim; ++j) images(i, j) = static_cast<float>(spread * rng.normal());
    images(i, data.labels[static_cast<std::size_t>(i)]) += 1.0f;
  }
  for (Index k = 0; k < c; ++k) texts(k, k) = 1.0f;

  MatrixFile probes{{static_cast<std::uint64_t>(data.size())}, {}};
  for (Index d : data.sample_shape) probes.dims.push_back(static_cast<std::uint64_t>(d));
  probes.values.assign(data.inputs.data(), data.inputs.data() + data.inputs.size());
  std::string labels = "label\n", names;
  for (int label : data.labels) labels += std::to_string(label) + "\n";
  for (const auto& name : classes) names += name + "\n";

  outputs.write_matrix_file("probes.bin", probes);
  outputs.write_matrix_file("image_embeddings.bin", to_matrix_file(images));
  outputs.write_matrix_file("text_embeddings.bin", to_matrix_file(texts));
  outputs.write("labels.csv", labels);
  outputs.write("concepts.txt", names);
  outputs.write("classes.txt", names);
  out << "wrote " << data.size() << " probes and " << c << " concepts to " << outputs.path("").string() << "\n";
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Config file of key = value lines");
  cmd->add_option("--seed", flags.seed, "Seed for every random stream");
  cmd->add_option("--set", flags.overrides, "Override a config key (key=value, repeatable)")->take_all();
  cmd->add_option("--out", flags.out_dir, "Output directory");
}

void add_file(CLI::App* cmd, const std::string& flag, const std::string& key, std::vector<std::string>& sets,
              const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&sets, key](const std::string& value) { sets.push_back(key + "=" + value); }, help);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stochastic LWTA networks and neuron dissection"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::vector<std::string> file_sets;
  const std::vector<std::string> modes{"stochastic", "deterministic"};

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes model.ckpt, train_report.csv, metrics.csv");
  auto* dissect_cmd = app.add_subcommand("dissect", "Describe the units of a layer; writes descriptors.csv");
  auto* match_cmd = app.add_subcommand("match", "Match a precomputed activation matrix; writes descriptors.csv");
  auto* eval_cmd = app.add_subcommand("eval", "Score head descriptors against class names; writes metrics.csv");
  auto* report_cmd = app.add_subcommand("report", "Per-example concept report; writes report.txt and report.csv");
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic probe and embedding fixture");

  for (auto* cmd : {train_cmd, dissect_cmd, match_cmd, eval_cmd, report_cmd, synth_cmd}) add_common(cmd, flags);
  for (auto* cmd : {train_cmd, dissect_cmd, report_cmd}) {
    cmd->add_option("--mode", flags.mode, "Competition mode")->check(CLI::IsMember(modes));
  }
  train_cmd->add_option("--samples", flags.samples, "Forward passes averaged at evaluation");
  for (auto* cmd : {dissect_cmd, match_cmd}) {
    cmd->add_option("--sim", flags.sim, "Similarity: cos, cos3, rank, wpmi or softwpmi");
    add_file(cmd, "--images", "images", file_sets, "Probe image embeddings (N x D matrix file)");
    add_file(cmd, "--texts", "texts", file_sets, "Concept text embeddings (M x D matrix file)");
    add_file(cmd, "--concepts", "concepts", file_sets, "Concept list, one per line");
  }
  for (auto* cmd : {dissect_cmd, report_cmd}) {
    add_file(cmd, "--checkpoint", "checkpoint", file_sets, "Model checkpoint");
    add_file(cmd, "--probes", "probes", file_sets, "Probe inputs (matrix file)");
  }
  add_file(match_cmd, "--activations", "activations", file_sets, "Activation matrix (N x K matrix file)");
  add_file(eval_cmd, "--descriptors", "descriptors", file_sets, "Descriptor CSV");
  add_file(eval_cmd, "--classes", "classes", file_sets, "Class names, one per line in label order");
  add_file(eval_cmd, "--concepts", "concepts", file_sets, "Concept list used for matching");
  add_file(eval_cmd, "--texts", "texts", file_sets, "Text embeddings aligned with the concept list");
  add_file(report_cmd, "--descriptors", "descriptors", file_sets, "Descriptor CSV");

  std::vector<std::string> argv_storage{"lwta"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (!app.get_subcommands().empty()) err << app.get_subcommands().front()->help();
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  Outputs outputs(flags.out_dir);
  try {
    // File flags act as overrides applied before any --set.
    flags.overrides.insert(flags.overrides.begin(), file_sets.begin(), file_sets.end());
    const Config config = resolve_config(flags, err);
    const std::string name = cmd->get_name();
    if (name == "train") {
      cmd_train(config, outputs, out, err);
    } else if (name == "dissect") {
      cmd_dissect(config, outputs, out);
    } else if (name == "match") {
      cmd_match(config, outputs, out);
    } else if (name == "eval") {
      cmd_eval(config, outputs, out);
    } else if (name == "report") {
      cmd_report(config, outputs, out);
    } else {
      cmd_synth(config, outputs, out);
    }
  } catch (const std::exception& e) {
    outputs.discard();
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace lwta
