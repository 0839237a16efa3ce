#include "lwta/dissection.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "lwta/errors.hpp"

namespace lwta {

ConceptActivationMatrix build_concept_matrix(const RowMatrix<float>& image_embeddings,
                                             const RowMatrix<float>& text_embeddings,
                                             std::vector<std::string> concepts, std::vector<std::string> probe_ids) {
  if (image_embeddings.cols() != text_embeddings.cols()) {
    throw DimensionError("image embeddings have dimension " + std::to_string(image_embeddings.cols()) +
                         ", text embeddings " + std::to_string(text_embeddings.cols()));
  }
  if (static_cast<Index>(concepts.size()) != text_embeddings.rows()) {
    throw DimensionError(std::to_string(concepts.size()) + " concepts but " + std::to_string(text_embeddings.rows()) +
                         " text embeddings");
  }
  if (probe_ids.empty()) {
    for (Index i = 0; i < image_embeddings.rows(); ++i) probe_ids.push_back(std::to_string(i));
  }
  if (static_cast<Index>(probe_ids.size()) != image_embeddings.rows()) {
    throw DimensionError("probe id count does not match the image embeddings");
  }
  auto normalized = [](const RowMatrix<float>& m, const char* what) {
    MatrixXd out = m.cast<double>();
    for (Index r = 0; r < out.rows(); ++r) {
      const double norm = out.row(r).norm();
      if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw DegenerateEmbeddingError(std::string(what) + " embedding row " + std::to_string(r) + " has zero norm");
      }
      out.row(r) /= norm;
    }
    return out;
  };
  const MatrixXd images = normalized(image_embeddings, "image");
  const MatrixXd texts = normalized(text_embeddings, "text");
  return {images * texts.transpose(), std::move(probe_ids), std::move(concepts)};
}

std::vector<ActivationRecord> records_from_matrix(const std::string& layer, const MatrixXd& activations,
                                                  Index competitors) {
  if (competitors < 1 || activations.cols() % competitors != 0) {
    throw DimensionError("layer width " + std::to_string(activations.cols()) + " is not a multiple of " +
                         std::to_string(competitors));
  }
  std::vector<ActivationRecord> records;
  for (Index k = 0; k < activations.cols(); ++k) {
    records.push_back({{layer, k / competitors, k % competitors, competitors}, activations.col(k)});
  }
  return records;
}

namespace {

/// Per-unit summary [n x K] of a capture: identity for rows, spatial mean for maps.
MatrixXd summarize(const LayerCapture& capture) {
  const Index n = capture.shape[0], k = capture.shape[1];
  const Index spatial = capture.values.size() / (n * k);
  MatrixXd out(n, k);
  for (Index i = 0; i < n; ++i) {
    for (Index u = 0; u < k; ++u) {
      double sum = 0.0;
      for (Index s = 0; s < spatial; ++s) sum += capture.values((i * k + u) * spatial + s);
      out(i, u) = sum / static_cast<double>(spatial);
    }
  }
  return out;
}

LayerCapture capture_once(const Model& model, const Tensor& x, const LayerTap& tap, CompetitionMode mode, Rng& rng) {
  const LayerTap taps[] = {tap};
  auto result = forward_with_taps(model, x, taps, {&rng, mode});
  return std::move(result.captures.front());
}

}  // namespace

std::vector<ActivationRecord> record_activations(const Model& model, const Tensor& probes, const LayerTap& tap,
                                                 const RecordOptions& options) {
  const TapPoint& point = model.tap_point(tap.layer);
  if (point.kind != tap.kind) {
    throw TapError("layer '" + tap.layer + "' offers a " + to_string(point.kind) + " tap, not " + to_string(tap.kind));
  }
  const Index n = probes.dim(0);
  if (n < 1) throw ParameterError("probe set is empty");
  if (options.repeats < 1 || options.batch_size < 1) throw ParameterError("repeats and batch size must be positive");
  const long repeats = options.mode == CompetitionMode::deterministic ? 1 : options.repeats;

  const Index per_example = probes.size() / n;
  Shape sample_shape(probes.shape().begin() + 1, probes.shape().end());
  MatrixXd total = MatrixXd::Zero(n, point.width);
  for (long r = 0; r < repeats; ++r) {
    Rng rng(options.seed + static_cast<std::uint64_t>(r));
    for (Index start = 0; start < n; start += options.batch_size) {
      const Index count = std::min<Index>(options.batch_size, n - start);
      Shape shape{count};
      shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
      const Tensor batch = Tensor::constant(shape, probes.data().segment(start * per_example, count * per_example));
      total.middleRows(start, count) += summarize(capture_once(model, batch, tap, options.mode, rng));
    }
  }
  return records_from_matrix(tap.layer, total / static_cast<double>(repeats), point.competitors);
}

Index argmax_lowest(const VectorXd& scores) {
  if (scores.size() == 0) throw DimensionError("empty score vector");
  Index best = 0;
  for (Index m = 1; m < scores.size(); ++m) {
    if (scores(m) > scores(best)) best = m;
  }
  return best;
}

std::vector<NeuronDescriptor> match_neurons(const std::vector<ActivationRecord>& records,
                                            const ConceptActivationMatrix& p, const SimilarityFunction& sim) {
  if (records.empty()) throw ParameterError("no activation records to match");
  if (static_cast<Index>(p.concepts.size()) != p.concept_count()) {
    throw DimensionError("concept names do not match the concept matrix");
  }
  std::vector<NeuronDescriptor> out;
  out.reserve(records.size());
  for (const auto& record : records) {
    VectorXd scores = sim(record.q);
    const Index best = argmax_lowest(scores);
    out.push_back({record.neuron, best, p.concepts[static_cast<std::size_t>(best)], scores(best), std::move(scores)});
  }
  return out;
}

namespace {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", text.size());
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_double(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

}  // namespace

std::string descriptors_to_csv(const std::vector<NeuronDescriptor>& descriptors) {
  std::string out = "layer,block,unit,competitors,concept_index,concept,score\n";
  for (const auto& d : descriptors) {
    out += csv_field(d.neuron.layer) + ',' + std::to_string(d.neuron.block) + ',' + std::to_string(d.neuron.unit) +
           ',' + std::to_string(d.neuron.competitors) + ',' + std::to_string(d.concept_index) + ',' +
           csv_field(d.label) + ',' + format_double(d.score) + '\n';
  }
  return out;
}

std::vector<NeuronDescriptor> descriptors_from_csv(std::string_view text) {
  const auto rows = parse_csv(text);
  if (rows.empty() || rows.front().size() != 7 || rows.front()[0] != "layer") {
    throw ParseError("descriptor CSV lacks the expected header", 0);
  }
  std::vector<NeuronDescriptor> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    if (f.size() != 7) throw ParseError("descriptor CSV row " + std::to_string(r + 1) + " has the wrong field count", 0);
    try {
      NeuronDescriptor d;
      d.neuron = {f[0], std::stol(f[1]), std::stol(f[2]), std::stol(f[3])};
      d.concept_index = std::stol(f[4]);
      d.label = f[5];
      d.score = std::stod(f[6]);
      out.push_back(std::move(d));
    } catch (const std::logic_error&) {
      throw ParseError("descriptor CSV row " + std::to_string(r + 1) + " has a malformed number", 0);
    }
  }
  return out;
}

std::string ExampleReport::active_line() const {
  char buffer[96];
  const double percent = width > 0 ? 100.0 * static_cast<double>(active) / static_cast<double>(width) : 0.0;
  std::snprintf(buffer, sizeof(buffer), "Active neurons: %ld/%ld = %.2f%%", static_cast<long>(active),
                static_cast<long>(width), percent);
  return buffer;
}

std::string ExampleReport::to_text() const {
  std::ostringstream out;
  out << "Layer " << layer << "\n" << active_line() << "\n";
  auto section = [&](const char* title, const std::vector<ReportRow>& rows) {
    out << title << "\n";
    if (rows.empty()) out << "  (none)\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      char buffer[64];
      std::snprintf(buffer, sizeof(buffer), "  %2zu. block %4ld unit %3ld  %+.4f  ", i + 1,
                    static_cast<long>(rows[i].neuron.block), static_cast<long>(rows[i].neuron.unit),
                    rows[i].activation);
      out << buffer << rows[i].label << "\n";
    }
  };
  section("Highest |activation|:", top);
  section("Lowest |activation|:", bottom);
  return out.str();
}

std::string ExampleReport::to_csv() const {
  std::string out = "group,rank,layer,block,unit,activation,concept\n";
  auto rows = [&](const char* group, const std::vector<ReportRow>& list) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      out += std::string(group) + ',' + std::to_string(i + 1) + ',' + csv_field(layer) + ',' +
             std::to_string(list[i].neuron.block) + ',' + std::to_string(list[i].neuron.unit) + ',' +
             format_double(list[i].activation) + ',' + csv_field(list[i].label) + '\n';
    }
  };
  rows("top", top);
  rows("bottom", bottom);
  return out;
}

ExampleReport build_report(const std::string& layer, const VectorXd& activations, const std::vector<bool>& active,
                           const std::vector<NeuronDescriptor>& descriptors, Index k_top, Index k_bottom) {
  if (static_cast<Index>(active.size()) != activations.size()) throw DimensionError("activity mask length mismatch");
  if (k_top < 0 || k_bottom < 0) throw ParameterError("report sizes must be nonnegative");
  std::map<Index, const NeuronDescriptor*> by_unit;
  for (const auto& d : descriptors) {
    if (d.neuron.layer == layer) by_unit[d.neuron.flat()] = &d;
  }

  std::vector<Index> pool;
  for (Index k = 0; k < activations.size(); ++k) {
    if (active[static_cast<std::size_t>(k)]) pool.push_back(k);
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [&](Index a, Index b) { return std::abs(activations(a)) > std::abs(activations(b)); });

  ExampleReport report{layer, static_cast<Index>(pool.size()), activations.size(), {}, {}};
  auto row = [&](Index k) {
    const auto it = by_unit.find(k);
    if (it == by_unit.end()) {
      throw ContractError("no descriptor for unit " + std::to_string(k) + " of layer '" + layer + "'");
    }
    return ReportRow{it->second->neuron, it->second->label, activations(k)};
  };
  const auto top = std::min<std::size_t>(static_cast<std::size_t>(k_top), pool.size());
  const auto bottom = std::min<std::size_t>(static_cast<std::size_t>(k_bottom), pool.size() - top);
  for (std::size_t i = 0; i < top; ++i) report.top.push_back(row(pool[i]));
  for (std::size_t i = pool.size() - bottom; i < pool.size(); ++i) report.bottom.push_back(row(pool[i]));
  return report;
}

ExampleReport per_example_report(const Model& model, const Tensor& x, const LayerTap& tap,
                                 const std::vector<NeuronDescriptor>& descriptors, Index k_top, Index k_bottom,
                                 const RecordOptions& options) {
  if (x.rank() < 1 || x.dim(0) != 1) throw DimensionError("per-example report expects a single example");
  Rng rng(options.seed);
  const LayerCapture capture = capture_once(model, x, tap, options.mode, rng);
  const VectorXd activations = summarize(capture).row(0).transpose();
  std::vector<bool> active(static_cast<std::size_t>(activations.size()));
  if (capture.active.size() == capture.values.size() && capture.shape.size() == 2) {
    for (Index k = 0; k < activations.size(); ++k) active[static_cast<std::size_t>(k)] = capture.active(k) > 0.0f;
  } else {
    for (Index k = 0; k < activations.size(); ++k) active[static_cast<std::size_t>(k)] = activations(k) != 0.0;
  }
  return build_report(tap.layer, activations, active, descriptors, k_top, k_bottom);
}

}  // namespace lwta
