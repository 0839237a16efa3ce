#include "lwta/data.hpp"

#include <cmath>
#include <numbers>

#include "lwta/errors.hpp"

namespace lwta {

Tensor Dataset::batch(std::span<const Index> indices) const {
  const Index k = static_cast<Index>(indices.size()), width = inputs.cols();
  Array<float> values(k * width);
  for (Index r = 0; r < k; ++r) {
    const Index i = indices[static_cast<std::size_t>(r)];
    if (i < 0 || i >= size()) throw IndexError("dataset row " + std::to_string(i) + " out of range");
    values.segment(r * width, width) = inputs.row(i).transpose().array();
  }
  Shape shape{k};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor::constant(std::move(shape), std::move(values));
}

std::vector<int> Dataset::batch_labels(std::span<const Index> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset Dataset::subset(std::span<const Index> indices) const {
  Dataset out{sample_shape, RowMatrix<float>(static_cast<Index>(indices.size()), inputs.cols()), {}, classes};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.inputs.row(static_cast<Index>(r)) = inputs.row(indices[r]);
    out.labels.push_back(labels.at(static_cast<std::size_t>(indices[r])));
  }
  return out;
}

Dataset make_two_moons(Index n, double noise, Rng& rng) {
  if (n < 2) throw ParameterError("two-moons needs at least two points");
  Dataset data{{2}, RowMatrix<float>(n, 2), {}, 2};
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x = std::cos(t), y = std::sin(t);
    if (label == 1) {
      x = 1.0 - x;
      y = 0.5 - y;
    }
    data.inputs(i, 0) = static_cast<float>(x + noise * rng.normal());
    data.inputs(i, 1) = static_cast<float>(y + noise * rng.normal());
    data.labels.push_back(label);
  }
  return data;
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"square", "disc",        "triangle", "plus",   "horizontal bar",
                                              "vertical bar", "frame", "ring",     "cross", "diagonal"};
  return names;
}

namespace {

bool inside(int shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v), box = std::max(au, av), r = std::hypot(u, v);
  switch (shape) {
    case 0: return box <= 1.0;
    case 1: return r <= 1.0;
    case 2: return v >= -1.0 && v <= 1.0 && au <= (v + 1.0) / 2.0;
    case 3: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
    case 4: return av <= 0.3 && au <= 1.0;
    case 5: return au <= 0.3 && av <= 1.0;
    case 6: return box <= 1.0 && box >= 0.6;
    case 7: return r <= 1.0 && r >= 0.55;
    case 8: return std::abs(au - av) <= 0.3 && box <= 1.0;
    case 9: return std::abs(u - v) <= 0.35 && box <= 1.0;
    default: return false;
  }
}

}  // namespace

Dataset make_shapes(Index n, Index size, double noise, Rng& rng) {
  if (n < 1 || size < 4) throw ParameterError("shapes dataset needs n >= 1 and size >= 4");
  const int classes = static_cast<int>(shape_class_names().size());
  Dataset data{{1, size, size}, RowMatrix<float>(n, size * size), {}, classes};
  const double s = static_cast<double>(size);
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    const double cx = s / 2.0 + rng.uniform(-s / 8.0, s / 8.0);
    const double cy = s / 2.0 + rng.uniform(-s / 8.0, s / 8.0);
    const double radius = s * rng.uniform(0.28, 0.38);
    for (Index row = 0; row < size; ++row) {
      for (Index col = 0; col < size; ++col) {
        const double u = (static_cast<double>(col) + 0.5 - cx) / radius;
        const double v = (static_cast<double>(row) + 0.5 - cy) / radius;
        const double pixel = inside(label, u, v) ? 1.0 : 0.0;
        data.inputs(i, row * size + col) = static_cast<float>(pixel + noise * rng.normal());
      }
    }
    data.labels.push_back(label);
  }
  return data;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction, Rng& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ParameterError("test fraction must lie in (0, 1)");
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  const auto test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
  std::span<const Index> all(order);
  return {data.subset(all.subspan(test)), data.subset(all.first(test))};
}

}  // namespace lwta
