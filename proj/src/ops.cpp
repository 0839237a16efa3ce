#include "lwta/ops.hpp"

#include <cmath>
#include <numbers>

#include "lwta/errors.hpp"

namespace lwta {

namespace {

template <typename Scalar>
using Node = detail::Node<Scalar>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
void require_same_shape(const char* op, const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename Scalar>
ConstMatrixMap<Scalar> as_matrix(const Array<Scalar>& v, Index rows, Index cols) {
  return ConstMatrixMap<Scalar>(v.data(), rows, cols);
}

template <typename Scalar>
Array<Scalar> permute_values(const Array<Scalar>& values, const Shape& in_shape,
                             const std::vector<Index>& axes) {
  const std::size_t r = in_shape.size();
  std::vector<Index> in_strides(r);
  Index stride = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = stride;
    stride *= in_shape[i];
  }
  Shape out_shape(r);
  std::vector<Index> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
    src_strides[i] = in_strides[static_cast<std::size_t>(axes[i])];
  }
  Array<Scalar> out(values.size());
  std::vector<Index> counter(r, 0);
  Index src = 0;
  for (Index k = 0; k < values.size(); ++k) {
    out[k] = values[src];
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      src += src_strides[d];
      if (counter[d] < out_shape[d]) break;
      src -= src_strides[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  return out;
}

void check_row_softmax_input(const char* op, Index last) {
  if (last < 1) throw DimensionError(std::string(op) + ": last axis must be nonempty");
}

}  // namespace

void ConvGeometry::validate(Index h, Index w) const {
  if (kernel_h < 1 || kernel_w < 1 || stride < 1 || padding < 0) {
    throw DimensionError("invalid convolution geometry");
  }
  if (h + 2 * padding < kernel_h || w + 2 * padding < kernel_w) {
    throw DimensionError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                         " does not fit padded input " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape("add", a, b);
  return BasicTensor<Scalar>::from_op("add", a.shape(), a.data() + b.data(), {a, b}, [](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(n.grad);
  });
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape("sub", a, b);
  return BasicTensor<Scalar>::from_op("sub", a.shape(), a.data() - b.data(), {a, b}, [](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(-n.grad);
  });
}

template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape("mul", a, b);
  return BasicTensor<Scalar>::from_op("mul", a.shape(), a.data() * b.data(), {a, b}, [](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value);
    if (pb.requires_grad) pb.accumulate(n.grad * pa.value);
  });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor) {
  return BasicTensor<Scalar>::from_op("scale", a.shape(), a.data() * factor, {a},
                                      [factor](Node<Scalar>& n) { n.parents[0]->accumulate(n.grad * factor); });
}

template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar offset) {
  return BasicTensor<Scalar>::from_op("add_scalar", a.shape(), a.data() + offset, {a},
                                      [](Node<Scalar>& n) { n.parents[0]->accumulate(n.grad); });
}

template <typename Scalar>
BasicTensor<Scalar> add_broadcast(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()))) {
    throw DimensionError("add_broadcast: " + to_string(bs) + " is not a suffix of " + to_string(as));
  }
  const Index inner = b.size();
  const Index outer = a.size() / inner;
  Array<Scalar> out(a.size());
  MatrixMap<Scalar>(out.data(), outer, inner) =
      as_matrix(a.data(), outer, inner).rowwise() + as_matrix(b.data(), 1, inner).row(0);
  return BasicTensor<Scalar>::from_op("add_broadcast", as, std::move(out), {a, b}, [outer, inner](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) {
      Eigen::VectorXd col = as_matrix(n.grad, outer, inner).template cast<double>().colwise().sum().transpose();
      n.parents[1]->accumulate(col.template cast<Scalar>().array());
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Array<Scalar> out(m * p);
  MatrixMap<Scalar>(out.data(), m, p).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, p);
  return BasicTensor<Scalar>::from_op("matmul", {m, p}, std::move(out), {a, b}, [m, k, p](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto g = as_matrix(n.grad, m, p);
    if (pa.requires_grad) {
      Array<Scalar> ga(m * k);
      MatrixMap<Scalar>(ga.data(), m, k).noalias() = g * as_matrix(pb.value, k, p).transpose();
      pa.accumulate(ga);
    }
    if (pb.requires_grad) {
      Array<Scalar> gb(k * p);
      MatrixMap<Scalar>(gb.data(), k, p).noalias() = as_matrix(pa.value, m, k).transpose() * g;
      pb.accumulate(gb);
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> bmm(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2), p = b.dim(2);
  Array<Scalar> out(batch * m * p);
  for (Index i = 0; i < batch; ++i) {
    MatrixMap<Scalar>(out.data() + i * m * p, m, p).noalias() =
        ConstMatrixMap<Scalar>(a.data().data() + i * m * k, m, k) *
        ConstMatrixMap<Scalar>(b.data().data() + i * k * p, k, p);
  }
  return BasicTensor<Scalar>::from_op("bmm", {batch, m, p}, std::move(out), {a, b}, [=](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    Array<Scalar> ga, gb;
    if (pa.requires_grad) ga.resize(batch * m * k);
    if (pb.requires_grad) gb.resize(batch * k * p);
    for (Index i = 0; i < batch; ++i) {
      ConstMatrixMap<Scalar> g(n.grad.data() + i * m * p, m, p);
      if (pa.requires_grad) {
        MatrixMap<Scalar>(ga.data() + i * m * k, m, k).noalias() =
            g * ConstMatrixMap<Scalar>(pb.value.data() + i * k * p, k, p).transpose();
      }
      if (pb.requires_grad) {
        MatrixMap<Scalar>(gb.data() + i * k * p, k, p).noalias() =
            ConstMatrixMap<Scalar>(pa.value.data() + i * m * k, m, k).transpose() * g;
      }
    }
    if (pa.requires_grad) pa.accumulate(ga);
    if (pb.requires_grad) pb.accumulate(gb);
  });
}

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return BasicTensor<Scalar>::from_op("reshape", std::move(shape), a.data(), {a},
                                      [](Node<Scalar>& n) { n.parents[0]->accumulate(n.grad); });
}

template <typename Scalar>
BasicTensor<Scalar> permute(const BasicTensor<Scalar>& a, const std::vector<Index>& axes) {
  const Index r = a.rank();
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  if (static_cast<Index>(axes.size()) != r) throw DimensionError("permute: axis count mismatch");
  for (Index ax : axes) {
    if (ax < 0 || ax >= r || seen[static_cast<std::size_t>(ax)]) throw DimensionError("permute: invalid axes");
    seen[static_cast<std::size_t>(ax)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> inverse(static_cast<std::size_t>(r));
  for (std::size_t i = 0; i < axes.size(); ++i) {
    out_shape[i] = a.shape()[static_cast<std::size_t>(axes[i])];
    inverse[static_cast<std::size_t>(axes[i])] = static_cast<Index>(i);
  }
  Array<Scalar> out = permute_values(a.data(), a.shape(), axes);
  return BasicTensor<Scalar>::from_op("permute", out_shape, std::move(out), {a}, [out_shape, inverse](Node<Scalar>& n) {
    n.parents[0]->accumulate(permute_values(n.grad, out_shape, inverse));
  });
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs rank 2, got " + to_string(a.shape()));
  return permute(a, {1, 0});
}

template <typename Scalar>
BasicTensor<Scalar> select(const BasicTensor<Scalar>& a, Index axis, Index index) {
  const Index r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw IndexError("select: axis out of range for " + to_string(a.shape()));
  const Index len = a.shape()[static_cast<std::size_t>(axis)];
  if (index < 0 || index >= len) throw IndexError("select: index " + std::to_string(index) + " out of range");
  Index outer = 1, inner = 1;
  Shape out_shape;
  for (Index i = 0; i < r; ++i) {
    const Index d = a.shape()[static_cast<std::size_t>(i)];
    if (i < axis) outer *= d;
    if (i > axis) inner *= d;
    if (i != axis) out_shape.push_back(d);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Array<Scalar> out(outer * inner);
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * inner, inner) = a.data().segment((o * len + index) * inner, inner);
  }
  return BasicTensor<Scalar>::from_op("select", out_shape, std::move(out), {a}, [=](Node<Scalar>& n) {
    Array<Scalar> g = Array<Scalar>::Zero(outer * len * inner);
    for (Index o = 0; o < outer; ++o) g.segment((o * len + index) * inner, inner) = n.grad.segment(o * inner, inner);
    n.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> concat(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, Index axis) {
  const Index r = a.rank();
  if (axis < 0) axis += r;
  bool ok = b.rank() == r && axis >= 0 && axis < r;
  for (Index i = 0; ok && i < r; ++i) ok = i == axis || a.shape()[static_cast<std::size_t>(i)] == b.shape()[static_cast<std::size_t>(i)];
  if (!ok) throw DimensionError("concat: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= a.shape()[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < r; ++i) inner *= a.shape()[static_cast<std::size_t>(i)];
  const Index la = a.shape()[static_cast<std::size_t>(axis)] * inner;
  const Index lb = b.shape()[static_cast<std::size_t>(axis)] * inner;
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.shape()[static_cast<std::size_t>(axis)];
  Array<Scalar> out(outer * (la + lb));
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * (la + lb), la) = a.data().segment(o * la, la);
    out.segment(o * (la + lb) + la, lb) = b.data().segment(o * lb, lb);
  }
  return BasicTensor<Scalar>::from_op("concat", out_shape, std::move(out), {a, b}, [=](Node<Scalar>& n) {
    Array<Scalar> ga(outer * la), gb(outer * lb);
    for (Index o = 0; o < outer; ++o) {
      ga.segment(o * la, la) = n.grad.segment(o * (la + lb), la);
      gb.segment(o * lb, lb) = n.grad.segment(o * (la + lb) + la, lb);
    }
    n.parents[0]->accumulate(ga);
    n.parents[1]->accumulate(gb);
  });
}

template <typename Scalar>
BasicTensor<Scalar> repeat_leading(const BasicTensor<Scalar>& a, Index count) {
  if (count < 1) throw DimensionError("repeat_leading: count must be positive");
  Shape out_shape{count};
  out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
  const Index inner = a.size();
  Array<Scalar> out(count * inner);
  for (Index i = 0; i < count; ++i) out.segment(i * inner, inner) = a.data();
  return BasicTensor<Scalar>::from_op("repeat_leading", out_shape, std::move(out), {a}, [count, inner](Node<Scalar>& n) {
    Eigen::VectorXd g = as_matrix(n.grad, count, inner).template cast<double>().colwise().sum().transpose();
    n.parents[0]->accumulate(g.template cast<Scalar>().array());
  });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  return BasicTensor<Scalar>::from_op("relu", a.shape(), a.data().max(Scalar(0)), {a}, [](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    p.accumulate((p.value > Scalar(0)).select(n.grad, Scalar(0)));
  });
}

template <typename Scalar>
BasicTensor<Scalar> gelu(const BasicTensor<Scalar>& a) {
  const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  const Scalar k = Scalar(0.044715);
  const Array<Scalar>& x = a.data();
  Array<Scalar> t = (c * (x + k * x.cube())).tanh();
  Array<Scalar> out = Scalar(0.5) * x * (Scalar(1) + t);
  return BasicTensor<Scalar>::from_op("gelu", a.shape(), std::move(out), {a}, [c, k](Node<Scalar>& n) {
    const Array<Scalar>& x = n.parents[0]->value;
    Array<Scalar> t = (c * (x + k * x.cube())).tanh();
    Array<Scalar> d = Scalar(0.5) * (Scalar(1) + t) +
                      Scalar(0.5) * x * (Scalar(1) - t.square()) * c * (Scalar(1) + Scalar(3) * k * x.square());
    n.parents[0]->accumulate(n.grad * d);
  });
}

template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a) {
  return BasicTensor<Scalar>::from_op("exp", a.shape(), a.data().exp(), {a}, [](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad * n.parents[0]->value.exp());
  });
}

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& a) {
  const Index last = a.shape().back();
  check_row_softmax_input("softmax", last);
  if (!a.data().allFinite()) throw NumericError("softmax: non-finite input");
  const Index rows = a.size() / last;
  Array<Scalar> out(a.size());
  for (Index r = 0; r < rows; ++r) {
    auto x = a.data().segment(r * last, last);
    const Scalar m = x.maxCoeff();
    double total = 0.0;
    for (Index u = 0; u < last; ++u) total += std::exp(static_cast<double>(x[u] - m));
    for (Index u = 0; u < last; ++u) out[r * last + u] = static_cast<Scalar>(std::exp(static_cast<double>(x[u] - m)) / total);
  }
  Array<Scalar> saved = out;
  return BasicTensor<Scalar>::from_op("softmax", a.shape(), std::move(out), {a},
                                      [s = std::move(saved), rows, last](Node<Scalar>& n) {
    Array<Scalar> g(n.grad.size());
    for (Index r = 0; r < rows; ++r) {
      auto sr = s.segment(r * last, last);
      auto gr = n.grad.segment(r * last, last);
      double dot = 0.0;
      for (Index u = 0; u < last; ++u) dot += static_cast<double>(gr[u]) * sr[u];
      g.segment(r * last, last) = sr * (gr - static_cast<Scalar>(dot));
    }
    n.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> log_softmax(const BasicTensor<Scalar>& a) {
  const Index last = a.shape().back();
  check_row_softmax_input("log_softmax", last);
  if (!a.data().allFinite()) throw NumericError("log_softmax: non-finite input");
  const Index rows = a.size() / last;
  Array<Scalar> out(a.size());
  for (Index r = 0; r < rows; ++r) {
    auto x = a.data().segment(r * last, last);
    const double m = x.maxCoeff();
    double total = 0.0;
    for (Index u = 0; u < last; ++u) total += std::exp(x[u] - m);
    const double lse = m + std::log(total);
    for (Index u = 0; u < last; ++u) out[r * last + u] = static_cast<Scalar>(x[u] - lse);
  }
  Array<Scalar> saved = out;
  return BasicTensor<Scalar>::from_op("log_softmax", a.shape(), std::move(out), {a},
                                      [ls = std::move(saved), rows, last](Node<Scalar>& n) {
    Array<Scalar> g(n.grad.size());
    for (Index r = 0; r < rows; ++r) {
      auto gr = n.grad.segment(r * last, last);
      double total = 0.0;
      for (Index u = 0; u < last; ++u) total += gr[u];
      g.segment(r * last, last) = gr - ls.segment(r * last, last).exp() * static_cast<Scalar>(total);
    }
    n.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  const double total = a.data().template cast<double>().sum();
  const Index count = a.size();
  return BasicTensor<Scalar>::from_op("sum", {1}, Array<Scalar>::Constant(1, static_cast<Scalar>(total)), {a},
                                      [count](Node<Scalar>& n) {
    n.parents[0]->accumulate(Array<Scalar>::Constant(count, n.grad[0]));
  });
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& a) {
  const Index count = a.size();
  const double total = a.data().template cast<double>().sum() / static_cast<double>(count);
  return BasicTensor<Scalar>::from_op("mean", {1}, Array<Scalar>::Constant(1, static_cast<Scalar>(total)), {a},
                                      [count](Node<Scalar>& n) {
    n.parents[0]->accumulate(Array<Scalar>::Constant(count, n.grad[0] / static_cast<Scalar>(count)));
  });
}

template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [n x C], got " + to_string(logits.shape()));
  const Index rows = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  if (!logits.data().allFinite()) throw NumericError("cross_entropy: non-finite logits");
  std::vector<int> targets(labels.begin(), labels.end());
  Array<Scalar> probs(logits.size());
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    auto x = logits.data().segment(r * classes, classes);
    const double m = x.maxCoeff();
    double z = 0.0;
    for (Index c = 0; c < classes; ++c) z += std::exp(x[c] - m);
    total += m + std::log(z) - x[targets[static_cast<std::size_t>(r)]];
    for (Index c = 0; c < classes; ++c) probs[r * classes + c] = static_cast<Scalar>(std::exp(x[c] - m) / z);
  }
  const Scalar value = static_cast<Scalar>(total / static_cast<double>(rows));
  return BasicTensor<Scalar>::from_op("cross_entropy", {1}, Array<Scalar>::Constant(1, value), {logits},
                                      [p = std::move(probs), t = std::move(targets), rows, classes](Node<Scalar>& n) {
    Array<Scalar> g = p;
    for (Index r = 0; r < rows; ++r) g[r * classes + t[static_cast<std::size_t>(r)]] -= Scalar(1);
    n.parents[0]->accumulate(g * (n.grad[0] / static_cast<Scalar>(rows)));
  });
}

template <typename Scalar>
BasicTensor<Scalar> straight_through(const Array<Scalar>& hard, const BasicTensor<Scalar>& soft) {
  if (hard.size() != soft.size()) throw DimensionError("straight_through: hard/soft size mismatch");
  return BasicTensor<Scalar>::from_op("straight_through", soft.shape(), hard, {soft},
                                      [](Node<Scalar>& n) { n.parents[0]->accumulate(n.grad); });
}

template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gain,
                               const BasicTensor<Scalar>& shift, Scalar eps) {
  const Index d = x.shape().back();
  if (gain.size() != d || shift.size() != d) {
    throw DimensionError("layer_norm: gain/shift must have " + std::to_string(d) + " entries");
  }
  const Index rows = x.size() / d;
  Array<Scalar> normalized(x.size());
  Array<Scalar> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    auto v = x.data().segment(r * d, d).template cast<double>();
    const double mu = v.mean();
    const double var = (v - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[r] = static_cast<Scalar>(is);
    normalized.segment(r * d, d) = ((v - mu) * is).template cast<Scalar>();
  }
  Array<Scalar> out(x.size());
  for (Index r = 0; r < rows; ++r) out.segment(r * d, d) = normalized.segment(r * d, d) * gain.data() + shift.data();
  return BasicTensor<Scalar>::from_op("layer_norm", x.shape(), std::move(out), {x, gain, shift},
                                      [xh = std::move(normalized), is = std::move(inv_std), rows, d](Node<Scalar>& n) {
    auto& px = *n.parents[0];
    auto& pg = *n.parents[1];
    auto& pb = *n.parents[2];
    if (px.requires_grad) {
      Array<Scalar> gx(n.grad.size());
      for (Index r = 0; r < rows; ++r) {
        Eigen::ArrayXd dxh = (n.grad.segment(r * d, d) * pg.value).template cast<double>();
        Eigen::ArrayXd xhr = xh.segment(r * d, d).template cast<double>();
        const double m1 = dxh.mean();
        const double m2 = (dxh * xhr).mean();
        gx.segment(r * d, d) = ((dxh - m1 - xhr * m2) * static_cast<double>(is[r])).template cast<Scalar>();
      }
      px.accumulate(gx);
    }
    if (pg.requires_grad || pb.requires_grad) {
      Eigen::ArrayXd gg = Eigen::ArrayXd::Zero(d), gb = Eigen::ArrayXd::Zero(d);
      for (Index r = 0; r < rows; ++r) {
        Eigen::ArrayXd g = n.grad.segment(r * d, d).template cast<double>();
        gg += g * xh.segment(r * d, d).template cast<double>();
        gb += g;
      }
      pg.accumulate(gg.template cast<Scalar>());
      pb.accumulate(gb.template cast<Scalar>());
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> im2col(const BasicTensor<Scalar>& x, const ConvGeometry& geo) {
  if (x.rank() != 4) throw DimensionError("im2col: input must be [n x C x H x W], got " + to_string(x.shape()));
  const Index batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  geo.validate(h, w);
  const Index oh = geo.out_h(h), ow = geo.out_w(w);
  const Index kh = geo.kernel_h, kw = geo.kernel_w, s = geo.stride, pad = geo.padding;
  const Index cols = channels * kh * kw;
  const Index rows = batch * oh * ow;

  // Maps each output slot to its source offset, or -1 for padding.
  std::vector<Index> source(static_cast<std::size_t>(rows * cols));
  for (Index b = 0; b < batch; ++b) {
    for (Index y = 0; y < oh; ++y) {
      for (Index xo = 0; xo < ow; ++xo) {
        const Index row = (b * oh + y) * ow + xo;
        for (Index c = 0; c < channels; ++c) {
          for (Index i = 0; i < kh; ++i) {
            for (Index j = 0; j < kw; ++j) {
              const Index iy = y * s - pad + i, ix = xo * s - pad + j;
              const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
              source[static_cast<std::size_t>(row * cols + (c * kh + i) * kw + j)] =
                  inside ? ((b * channels + c) * h + iy) * w + ix : -1;
            }
          }
        }
      }
    }
  }
  Array<Scalar> out(rows * cols);
  for (Index k = 0; k < rows * cols; ++k) {
    const Index src = source[static_cast<std::size_t>(k)];
    out[k] = src < 0 ? Scalar(0) : x.data()[src];
  }
  const Index in_size = x.size();
  return BasicTensor<Scalar>::from_op("im2col", {rows, cols}, std::move(out), {x},
                                      [src = std::move(source), in_size](Node<Scalar>& n) {
    Array<Scalar> g = Array<Scalar>::Zero(in_size);
    for (std::size_t k = 0; k < src.size(); ++k) {
      if (src[k] >= 0) g[src[k]] += n.grad[static_cast<Index>(k)];
    }
    n.parents[0]->accumulate(g);
  });
}

#define LWTA_INSTANTIATE_OPS(S)                                                                         \
  template BasicTensor<S> add(const BasicTensor<S>&, const BasicTensor<S>&);                            \
  template BasicTensor<S> sub(const BasicTensor<S>&, const BasicTensor<S>&);                            \
  template BasicTensor<S> mul(const BasicTensor<S>&, const BasicTensor<S>&);                            \
  template BasicTensor<S> scale(const BasicTensor<S>&, S);                                              \
  template BasicTensor<S> add_scalar(const BasicTensor<S>&, S);                                         \
  template BasicTensor<S> add_broadcast(const BasicTensor<S>&, const BasicTensor<S>&);                  \
  template BasicTensor<S> matmul(const BasicTensor<S>&, const BasicTensor<S>&);                         \
  template BasicTensor<S> bmm(const BasicTensor<S>&, const BasicTensor<S>&);                            \
  template BasicTensor<S> reshape(const BasicTensor<S>&, Shape);                                        \
  template BasicTensor<S> permute(const BasicTensor<S>&, const std::vector<Index>&);                    \
  template BasicTensor<S> transpose(const BasicTensor<S>&);                                             \
  template BasicTensor<S> select(const BasicTensor<S>&, Index, Index);                                  \
  template BasicTensor<S> concat(const BasicTensor<S>&, const BasicTensor<S>&, Index);                  \
  template BasicTensor<S> repeat_leading(const BasicTensor<S>&, Index);                                 \
  template BasicTensor<S> relu(const BasicTensor<S>&);                                                  \
  template BasicTensor<S> gelu(const BasicTensor<S>&);                                                  \
  template BasicTensor<S> exp(const BasicTensor<S>&);                                                   \
  template BasicTensor<S> softmax(const BasicTensor<S>&);                                               \
  template BasicTensor<S> log_softmax(const BasicTensor<S>&);                                           \
  template BasicTensor<S> sum(const BasicTensor<S>&);                                                   \
  template BasicTensor<S> mean(const BasicTensor<S>&);                                                  \
  template BasicTensor<S> cross_entropy(const BasicTensor<S>&, std::span<const int>);                   \
  template BasicTensor<S> straight_through(const Array<S>&, const BasicTensor<S>&);                     \
  template BasicTensor<S> layer_norm(const BasicTensor<S>&, const BasicTensor<S>&, const BasicTensor<S>&, S); \
  template BasicTensor<S> im2col(const BasicTensor<S>&, const ConvGeometry&);

LWTA_INSTANTIATE_OPS(float)
LWTA_INSTANTIATE_OPS(double)

#undef LWTA_INSTANTIATE_OPS

}  // namespace lwta
