#pragma once

#include <map>
#include <string>
#include <vector>

#include "lwta/dissection.hpp"

namespace lwta {

/// Fraction of classifier-head neurons whose matched concept equals their class name. Neuron k
/// (flat index) stands for class k. Raises MetricError when a class name is absent from
/// `concepts`, appears twice, or the descriptors do not cover each class exactly once.
double identification_accuracy(const std::vector<NeuronDescriptor>& head, const std::vector<std::string>& class_names,
                               const std::vector<std::string>& concepts);

/// Mean cosine between the embedding of each neuron's description and of its class name.
/// Raises MetricError for a missing embedding.
double description_similarity_score(const std::vector<NeuronDescriptor>& head,
                                    const std::vector<std::string>& class_names,
                                    const std::map<std::string, VectorXd>& embeddings);

/// Maps each concept to the matching row of an M x D embedding matrix.
std::map<std::string, VectorXd> embedding_table(const std::vector<std::string>& concepts,
                                                const RowMatrix<float>& embeddings);

}  // namespace lwta
