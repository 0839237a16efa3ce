#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lwta {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Eager non-finite checks on every recorded op. On by default in debug builds.
void set_nonfinite_checks(bool enabled);
bool nonfinite_checks_enabled();

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Array<Scalar> value;
  Array<Scalar> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Array<Scalar>& g);
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share the underlying node; values are
/// immutable once built, except for leaves updated in place by optimizers.
template <typename Scalar>
class BasicTensor {
 public:
  using scalar_type = Scalar;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  BasicTensor() = default;

  static BasicTensor constant(Shape shape, Array<Scalar> values);
  static BasicTensor parameter(Shape shape, Array<Scalar> values);
  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor scalar(Scalar value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Array<Scalar>& data() const { return node_->value; }
  /// Leaves only; used by optimizers and initializers.
  Array<Scalar>& mutable_data();

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  /// Zero-filled when nothing has been accumulated yet.
  Array<Scalar> grad() const;
  void zero_grad() { node_->grad.resize(0); }

  Scalar item() const;
  BasicTensor detach() const { return constant(shape(), data()); }

  Eigen::Map<const RowMatrix<Scalar>> matrix() const;

  /// Builds an op result. Parents and the backward rule are only retained when some
  /// parent requires gradients.
  static BasicTensor from_op(const char* op, Shape shape, Array<Scalar> values,
                             std::vector<BasicTensor> parents,
                             std::function<void(detail::Node<Scalar>&)> backward);

  const NodePtr& node() const { return node_; }

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Operations reachable from a root, in topological order (parents first).
template <typename Scalar>
class ComputationTape {
 public:
  using NodePtr = typename BasicTensor<Scalar>::NodePtr;

  static ComputationTape record(const BasicTensor<Scalar>& root);

  const std::vector<NodePtr>& nodes() const { return nodes_; }

  /// Seeds d(root)/d(root) = 1, propagates, then releases every interior node.
  void run_backward();

 private:
  std::vector<NodePtr> nodes_;
};

/// Populates gradients of every requires_grad leaf reachable from `loss`.
/// Gradients accumulate across calls until zero_grad().
template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss);

}  // namespace lwta
