#pragma once

#include <span>

#include "lwta/tensor.hpp"

namespace lwta {

// Element-wise ops require identical shapes; shape mismatches raise DimensionError.
template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);
template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);
template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);
template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor);
template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar offset);

/// a + b where b's shape equals the trailing dimensions of a (bias, positional embedding).
template <typename Scalar>
BasicTensor<Scalar> add_broadcast(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);
/// Batched matmul: [n x m x k] * [n x k x p] -> [n x m x p].
template <typename Scalar>
BasicTensor<Scalar> bmm(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape);
template <typename Scalar>
BasicTensor<Scalar> permute(const BasicTensor<Scalar>& a, const std::vector<Index>& axes);
template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a);
/// Drops `axis`, keeping slice `index`.
template <typename Scalar>
BasicTensor<Scalar> select(const BasicTensor<Scalar>& a, Index axis, Index index);
template <typename Scalar>
BasicTensor<Scalar> concat(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, Index axis);
/// Prepends a leading axis of length `count`, repeating `a`.
template <typename Scalar>
BasicTensor<Scalar> repeat_leading(const BasicTensor<Scalar>& a, Index count);

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a);
/// tanh approximation.
template <typename Scalar>
BasicTensor<Scalar> gelu(const BasicTensor<Scalar>& a);
template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a);

/// Softmax over the last axis, max-subtracted. Non-finite input raises NumericError.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& a);
template <typename Scalar>
BasicTensor<Scalar> log_softmax(const BasicTensor<Scalar>& a);

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a);
template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& a);

/// Mean negative log-likelihood of `labels` under softmax(logits); logits are [n x C].
template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels);

/// Forward value is `hard`; the incoming gradient is passed unchanged to `soft`.
template <typename Scalar>
BasicTensor<Scalar> straight_through(const Array<Scalar>& hard, const BasicTensor<Scalar>& soft);

/// Layer normalization over the last axis with learned gain and shift.
template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gain,
                               const BasicTensor<Scalar>& shift, Scalar eps = Scalar(1e-5));

struct ConvGeometry {
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index padding = 0;

  Index out_h(Index h) const { return (h + 2 * padding - kernel_h) / stride + 1; }
  Index out_w(Index w) const { return (w + 2 * padding - kernel_w) / stride + 1; }
  /// Throws DimensionError unless the geometry yields a positive output for [h x w].
  void validate(Index h, Index w) const;
};

/// [n x C x H x W] -> [(n*H'*W') x (C*kh*kw)]; rows ordered (n, h', w'), columns (c, i, j).
template <typename Scalar>
BasicTensor<Scalar> im2col(const BasicTensor<Scalar>& x, const ConvGeometry& geometry);

}  // namespace lwta
