#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lwta/random.hpp"
#include "lwta/tensor.hpp"

namespace lwta {

/// In-memory labelled dataset; `inputs` holds one flattened example per row.
struct Dataset {
  Shape sample_shape;
  RowMatrix<float> inputs;
  std::vector<int> labels;
  int classes = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
  /// Rows `indices` as a tensor of shape [k, sample_shape...].
  Tensor batch(std::span<const Index> indices) const;
  std::vector<int> batch_labels(std::span<const Index> indices) const;
  Dataset subset(std::span<const Index> indices) const;
};

/// Interleaving half-moons in 2D with isotropic Gaussian noise; labels alternate 0/1.
Dataset make_two_moons(Index n, double noise, Rng& rng);

/// Ten classes of simple binary shapes on a `size` x `size` single-channel canvas, with random
/// position jitter, scale jitter and additive Gaussian pixel noise.
Dataset make_shapes(Index n, Index size, double noise, Rng& rng);

/// Names of the shape classes, indexed by label.
const std::vector<std::string>& shape_class_names();

/// Random split into (train, test) with `test_fraction` of the examples held out.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction, Rng& rng);

}  // namespace lwta
