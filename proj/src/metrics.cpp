#include "lwta/metrics.hpp"

#include <algorithm>

#include "lwta/errors.hpp"

namespace lwta {

namespace {

/// Descriptors ordered by class index; validates one per class.
std::vector<const NeuronDescriptor*> by_class(const std::vector<NeuronDescriptor>& head, std::size_t classes) {
  if (head.size() != classes) {
    throw MetricError(std::to_string(head.size()) + " descriptors for " + std::to_string(classes) + " classes");
  }
  std::vector<const NeuronDescriptor*> out(classes, nullptr);
  for (const auto& d : head) {
    const Index k = d.neuron.flat();
    if (k < 0 || k >= static_cast<Index>(classes) || out[static_cast<std::size_t>(k)] != nullptr) {
      throw MetricError("descriptors must cover each output neuron exactly once (neuron " + std::to_string(k) + ")");
    }
    out[static_cast<std::size_t>(k)] = &d;
  }
  return out;
}

}  // namespace

double identification_accuracy(const std::vector<NeuronDescriptor>& head, const std::vector<std::string>& class_names,
                               const std::vector<std::string>& concepts) {
  if (class_names.empty()) throw MetricError("no class names");
  for (const auto& name : class_names) {
    const auto n = std::count(concepts.begin(), concepts.end(), name);
    if (n != 1) {
      throw MetricError("class '" + name + "' appears " + std::to_string(n) + " times in the concept set (expected 1)");
    }
  }
  const auto ordered = by_class(head, class_names.size());
  std::size_t correct = 0;
  for (std::size_t k = 0; k < ordered.size(); ++k) correct += ordered[k]->label == class_names[k] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(class_names.size());
}

double description_similarity_score(const std::vector<NeuronDescriptor>& head,
                                    const std::vector<std::string>& class_names,
                                    const std::map<std::string, VectorXd>& embeddings) {
  if (class_names.empty()) throw MetricError("no class names");
  const auto ordered = by_class(head, class_names.size());
  auto lookup = [&](const std::string& text) -> const VectorXd& {
    const auto it = embeddings.find(text);
    if (it == embeddings.end()) throw MetricError("no text embedding for '" + text + "'");
    return it->second;
  };
  double total = 0.0;
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    const VectorXd& a = lookup(ordered[k]->label);
    const VectorXd& b = lookup(class_names[k]);
    if (a.size() != b.size()) throw MetricError("text embeddings differ in dimension");
    const double denom = a.norm() * b.norm();
    if (denom == 0.0) throw MetricError("zero-norm text embedding");
    total += a.dot(b) / denom;
  }
  return total / static_cast<double>(ordered.size());
}

std::map<std::string, VectorXd> embedding_table(const std::vector<std::string>& concepts,
                                                const RowMatrix<float>& embeddings) {
  if (static_cast<Index>(concepts.size()) != embeddings.rows()) {
    throw DimensionError(std::to_string(concepts.size()) + " concepts but " + std::to_string(embeddings.rows()) +
                         " embedding rows");
  }
  std::map<std::string, VectorXd> table;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    table[concepts[i]] = embeddings.row(static_cast<Index>(i)).transpose().cast<double>();
  }
  return table;
}

}  // namespace lwta
