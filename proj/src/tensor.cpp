#include "lwta/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_set>

#include "lwta/errors.hpp"

namespace lwta {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_nonfinite_checks{false};
#else
std::atomic<bool> g_nonfinite_checks{true};
#endif

}  // namespace

void set_nonfinite_checks(bool enabled) { g_nonfinite_checks.store(enabled); }
bool nonfinite_checks_enabled() { return g_nonfinite_checks.load(); }

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

template <typename Scalar>
void Node<Scalar>::accumulate(const Array<Scalar>& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape, Index values) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (numel(shape) != values) {
    throw DimensionError("shape " + to_string(shape) + " does not hold " + std::to_string(values) +
                         " values");
  }
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::constant(Shape shape, Array<Scalar> values) {
  check_shape(shape, values.size());
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return BasicTensor(std::move(node));
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::parameter(Shape shape, Array<Scalar> values) {
  BasicTensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  BasicTensor t = constant(std::move(shape), Array<Scalar>::Zero(n));
  t.node_->requires_grad = requires_grad;
  return t;
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::scalar(Scalar value) {
  return constant({1}, Array<Scalar>::Constant(1, value));
}

template <typename Scalar>
Index BasicTensor<Scalar>::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Array<Scalar>& BasicTensor<Scalar>::mutable_data() {
  if (!node_->is_leaf() || node_->released) {
    throw ContractError("only leaf tensors may be modified in place");
  }
  return node_->value;
}

template <typename Scalar>
Array<Scalar> BasicTensor<Scalar>::grad() const {
  if (has_grad()) return node_->grad;
  return Array<Scalar>::Zero(size());
}

template <typename Scalar>
Scalar BasicTensor<Scalar>::item() const {
  if (size() != 1) {
    throw ContractError("item() needs a single-element tensor, got " + to_string(shape()));
  }
  return node_->value[0];
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> BasicTensor<Scalar>::matrix() const {
  if (rank() != 2) throw DimensionError("matrix view needs rank 2, got " + to_string(shape()));
  return Eigen::Map<const RowMatrix<Scalar>>(node_->value.data(), node_->shape[0], node_->shape[1]);
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::from_op(
    const char* op, Shape shape, Array<Scalar> values, std::vector<BasicTensor> parents,
    std::function<void(detail::Node<Scalar>&)> backward) {
  if (nonfinite_checks_enabled() && !values.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  BasicTensor out = constant(std::move(shape), std::move(values));
  out.node_->op = op;
  bool any_grad = false;
  for (const auto& p : parents) any_grad = any_grad || p.requires_grad();
  if (any_grad) {
    for (const auto& p : parents) {
      if (p.node_->released) throw ContractError(std::string(op) + ": input belongs to a freed tape");
    }
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

template <typename Scalar>
ComputationTape<Scalar> ComputationTape<Scalar>::record(const BasicTensor<Scalar>& root) {
  ComputationTape tape;
  if (!root.defined()) throw ContractError("backward on an undefined tensor");
  if (root.node()->released) throw ContractError("loss is not on a live tape (already backpropagated)");
  if (!root.requires_grad()) return tape;

  std::unordered_set<const detail::Node<Scalar>*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        if (parent->released) throw ContractError("graph references a freed tape node");
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename Scalar>
void ComputationTape<Scalar>::run_backward() {
  if (nodes_.empty()) return;
  auto& root = nodes_.back();
  root->accumulate(Array<Scalar>::Ones(root->value.size()));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf()) continue;
    if (node.grad.size() > 0) node.backward(node);
  }
  for (auto& node : nodes_) {
    if (node->is_leaf()) continue;
    node->grad.resize(0);
    node->parents.clear();
    node->backward = nullptr;
    node->released = true;
  }
  nodes_.clear();
}

template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  ComputationTape<Scalar>::record(loss).run_backward();
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;
template class ComputationTape<float>;
template class ComputationTape<double>;
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace lwta
