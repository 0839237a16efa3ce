#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lwta/models.hpp"
#include "lwta/similarity.hpp"

namespace lwta {

struct ConceptActivationMatrix {
  MatrixXd similarities;  // N x M cosines
  std::vector<std::string> probe_ids;
  std::vector<std::string> concepts;

  Index probes() const { return similarities.rows(); }
  Index concept_count() const { return similarities.cols(); }
};

/// P[i][j] = cos(I_i, T_j), evaluated in double. Zero-norm rows raise DegenerateEmbeddingError
/// naming the row. Empty `probe_ids` defaults to the row numbers.
ConceptActivationMatrix build_concept_matrix(const RowMatrix<float>& image_embeddings,
                                             const RowMatrix<float>& text_embeddings,
                                             std::vector<std::string> concepts,
                                             std::vector<std::string> probe_ids = {});

struct NeuronId {
  std::string layer;
  Index block = 0;
  Index unit = 0;
  Index competitors = 1;

  /// Position within the layer, block * U + unit.
  Index flat() const { return block * competitors + unit; }
  friend bool operator==(const NeuronId&, const NeuronId&) = default;
};

struct ActivationRecord {
  NeuronId neuron;
  VectorXd q;  // one entry per probe
};

struct RecordOptions {
  CompetitionMode mode = CompetitionMode::deterministic;
  std::uint64_t seed = 0;
  /// Stochastic passes averaged per probe.
  long repeats = 1;
  long batch_size = 256;
};

/// Activations of every unit at `tap` over the probe set [N x input...]. Dense and class-token
/// taps record the unit output; conv taps record the spatial mean of each map.
std::vector<ActivationRecord> record_activations(const Model& model, const Tensor& probes, const LayerTap& tap,
                                                 const RecordOptions& options);

/// Records from an N x K activation matrix whose columns are grouped in blocks of `competitors`.
std::vector<ActivationRecord> records_from_matrix(const std::string& layer, const MatrixXd& activations,
                                                  Index competitors);

struct NeuronDescriptor {
  NeuronId neuron;
  Index concept_index = 0;
  std::string label;
  double score = 0.0;
  VectorXd scores;  // may be empty when read back from CSV
};

/// Index of the largest entry; the lowest index wins ties.
Index argmax_lowest(const VectorXd& scores);

std::vector<NeuronDescriptor> match_neurons(const std::vector<ActivationRecord>& records,
                                            const ConceptActivationMatrix& p, const SimilarityFunction& sim);

/// CSV: layer,block,unit,competitors,concept_index,concept,score.
std::string descriptors_to_csv(const std::vector<NeuronDescriptor>& descriptors);
std::vector<NeuronDescriptor> descriptors_from_csv(std::string_view text);

struct ReportRow {
  NeuronId neuron;
  std::string label;
  double activation = 0.0;
};

struct ExampleReport {
  std::string layer;
  Index active = 0;
  Index width = 0;
  std::vector<ReportRow> top;
  std::vector<ReportRow> bottom;

  /// "Active neurons: 48/768 = 6.25%".
  std::string active_line() const;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Ranks the active units of one example by |activation| (descending, lowest index on ties) and
/// keeps the first k_top and, from the rest, the last k_bottom. Short pools are truncated.
ExampleReport build_report(const std::string& layer, const VectorXd& activations, const std::vector<bool>& active,
                           const std::vector<NeuronDescriptor>& descriptors, Index k_top, Index k_bottom);

/// One forward pass of x ([1 x input...]) followed by build_report on the tapped layer.
ExampleReport per_example_report(const Model& model, const Tensor& x, const LayerTap& tap,
                                 const std::vector<NeuronDescriptor>& descriptors, Index k_top, Index k_bottom,
                                 const RecordOptions& options);

}  // namespace lwta
