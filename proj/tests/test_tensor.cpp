#include <gtest/gtest.h>

#include <functional>

#include "lwta/errors.hpp"
#include "lwta/ops.hpp"
#include "lwta/random.hpp"
#include "oracles.hpp"

namespace lwta {
namespace {

struct Input {
  Shape shape;
  Array<double> values;
};

Input random_input(Shape shape, Rng& rng, double scale = 1.0) {
  Array<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = scale * rng.normal();
  return {std::move(shape), std::move(v)};
}

using Fn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Norm-relative error between the tape gradient of sum(c * f(inputs)) and central differences.
double gradient_error(const Fn& f, std::vector<Input> inputs, std::uint64_t seed = 17) {
  std::vector<TensorD> params;
  for (const auto& in : inputs) params.push_back(TensorD::parameter(in.shape, in.values));
  const TensorD probe = f(params);
  Rng rng(seed);
  Array<double> weights(probe.size());
  for (Index i = 0; i < weights.size(); ++i) weights(i) = rng.normal();
  const TensorD c = TensorD::constant(probe.shape(), weights);
  backward(sum(mul(f(params), c)));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto objective = [&](const oracle::Vec& x) {
      std::vector<TensorD> consts;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        Array<double> v = inputs[j].values;
        if (j == k) v = Eigen::Map<const Array<double>>(x.data(), static_cast<Index>(x.size()));
        consts.push_back(TensorD::constant(inputs[j].shape, v));
      }
      return sum(mul(f(consts), c)).item();
    };
    const oracle::Vec x(inputs[k].values.data(), inputs[k].values.data() + inputs[k].values.size());
    const auto numeric = oracle::finite_difference(objective, x);
    const Array<double> g = params[k].grad();
    const oracle::Vec analytic(g.data(), g.data() + g.size());
    worst = std::max(worst, oracle::norm_relative_error(analytic, numeric));
  }
  return worst;
}

class GradientCheck : public ::testing::Test {
 protected:
  Rng rng{2024};
};

TEST_F(GradientCheck, Elementwise) {
  EXPECT_LT(gradient_error([](auto& p) { return add(p[0], p[1]); }, {random_input({3, 4}, rng), random_input({3, 4}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return sub(p[0], p[1]); }, {random_input({3, 4}, rng), random_input({3, 4}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return mul(p[0], p[1]); }, {random_input({5}, rng), random_input({5}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return scale(p[0], 2.5); }, {random_input({6}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return add_scalar(p[0], 1.5); }, {random_input({6}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return exp(p[0]); }, {random_input({2, 3}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return gelu(p[0]); }, {random_input({2, 5}, rng)}), 1e-7);
  // Keep relu inputs away from the kink.
  Input r = random_input({10}, rng);
  for (Index i = 0; i < r.values.size(); ++i) r.values(i) += r.values(i) > 0 ? 0.1 : -0.1;
  EXPECT_LT(gradient_error([](auto& p) { return relu(p[0]); }, {r}), 1e-7);
}

TEST_F(GradientCheck, Broadcast) {
  EXPECT_LT(gradient_error([](auto& p) { return add_broadcast(p[0], p[1]); },
                           {random_input({2, 3, 4}, rng), random_input({3, 4}, rng)}),
            1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return add_broadcast(p[0], p[1]); },
                           {random_input({5, 4}, rng), random_input({4}, rng)}),
            1e-7);
}

TEST_F(GradientCheck, MatrixProducts) {
  EXPECT_LT(gradient_error([](auto& p) { return matmul(p[0], p[1]); }, {random_input({3, 4}, rng), random_input({4, 5}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return bmm(p[0], p[1]); }, {random_input({2, 3, 4}, rng), random_input({2, 4, 2}, rng)}), 1e-7);
}

TEST_F(GradientCheck, Layout) {
  EXPECT_LT(gradient_error([](auto& p) { return reshape(p[0], {6, 2}); }, {random_input({3, 4}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return permute(p[0], {2, 0, 1}); }, {random_input({2, 3, 4}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return transpose(p[0]); }, {random_input({3, 5}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return select(p[0], 1, 2); }, {random_input({2, 4, 3}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return concat(p[0], p[1], 1); }, {random_input({2, 1, 3}, rng), random_input({2, 4, 3}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return repeat_leading(p[0], 3); }, {random_input({2, 3}, rng)}), 1e-7);
}

TEST_F(GradientCheck, Reductions) {
  EXPECT_LT(gradient_error([](auto& p) { return softmax(p[0]); }, {random_input({3, 5}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return log_softmax(p[0]); }, {random_input({3, 5}, rng)}), 1e-7);
  EXPECT_LT(gradient_error([](auto& p) { return mean(p[0]); }, {random_input({4, 2}, rng)}), 1e-7);
  const std::vector<int> labels{0, 3, 2};
  EXPECT_LT(gradient_error([&](auto& p) { return cross_entropy(p[0], labels); }, {random_input({3, 4}, rng)}), 1e-7);
}

TEST_F(GradientCheck, LayerNorm) {
  EXPECT_LT(gradient_error([](auto& p) { return layer_norm(p[0], p[1], p[2]); },
                           {random_input({3, 6}, rng), random_input({6}, rng), random_input({6}, rng)}),
            1e-6);
}

TEST_F(GradientCheck, Im2col) {
  const ConvGeometry geo{3, 3, 2, 1};
  EXPECT_LT(gradient_error([&](auto& p) { return im2col(p[0], geo); }, {random_input({2, 2, 5, 4}, rng)}), 1e-7);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(1);
  const Input in = random_input({4, 7}, rng, 10.0);
  const TensorD probs = softmax(TensorD::constant(in.shape, in.values));
  const auto s = probs.matrix();
  for (Index r = 0; r < 4; ++r) {
    EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
    oracle::Vec row(in.values.data() + r * 7, in.values.data() + (r + 1) * 7);
    const auto ref = oracle::softmax(row);
    for (Index c = 0; c < 7; ++c) EXPECT_NEAR(s(r, c), ref[static_cast<std::size_t>(c)], 1e-12);
  }
}

TEST(Ops, Im2colMatchesDirectIndexing) {
  Rng rng(4);
  const Input in = random_input({1, 2, 4, 4}, rng);
  const ConvGeometry geo{3, 3, 1, 1};
  const TensorD unfolded = im2col(TensorD::constant(in.shape, in.values), geo);
  const auto cols = unfolded.matrix();
  ASSERT_EQ(cols.rows(), 16);
  ASSERT_EQ(cols.cols(), 18);
  for (Index h = 0; h < 4; ++h) {
    for (Index w = 0; w < 4; ++w) {
      for (Index c = 0; c < 2; ++c) {
        for (Index i = 0; i < 3; ++i) {
          for (Index j = 0; j < 3; ++j) {
            const Index y = h + i - 1, x = w + j - 1;
            const double expected = (y < 0 || y >= 4 || x < 0 || x >= 4) ? 0.0 : in.values(c * 16 + y * 4 + x);
            EXPECT_EQ(cols(h * 4 + w, c * 9 + i * 3 + j), expected);
          }
        }
      }
    }
  }
}

TEST(Ops, ShapeErrors) {
  const auto a = TensorD::zeros({2, 3});
  const auto b = TensorD::zeros({3, 2});
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_THROW(reshape(a, {4, 2}), DimensionError);
}

TEST(Ops, CrossEntropyRejectsBadLabels) {
  const auto logits = TensorD::zeros({2, 3});
  const std::vector<int> labels{0, 3};
  EXPECT_THROW(cross_entropy(logits, labels), IndexError);
}

TEST(Ops, SoftmaxRejectsNonFinite) {
  Array<double> v(2);
  v << 1.0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(softmax(TensorD::constant({1, 2}, v)), NumericError);
}

TEST(Ops, StraightThroughValueAndGradient) {
  Array<double> hard(3), soft(3);
  hard << 0, 1, 0;
  soft << 0.2, 0.5, 0.3;
  auto s = TensorD::parameter({3}, soft);
  auto st = straight_through(hard, s);
  EXPECT_TRUE((st.data() == hard).all());
  Array<double> c(3);
  c << 1, 2, 3;
  backward(sum(mul(st, TensorD::constant({3}, c))));
  EXPECT_TRUE((s.grad() == c).all());
}

TEST(Tape, BackwardTwiceIsAContractError) {
  auto x = TensorD::parameter({2}, Array<double>::Ones(2));
  auto loss = sum(mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), ContractError);
}

TEST(Tape, NonScalarLossRejected) {
  auto x = TensorD::parameter({2}, Array<double>::Ones(2));
  EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Tape, GradientsAccumulateUntilCleared) {
  auto x = TensorD::parameter({1}, Array<double>::Constant(1, 3.0));
  backward(sum(mul(x, x)));
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()(0), 12.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tape, InteriorNodesCannotBeMutated) {
  auto x = TensorD::parameter({1}, Array<double>::Ones(1));
  auto y = mul(x, x);
  EXPECT_THROW(y.mutable_data(), ContractError);
}

}  // namespace
}  // namespace lwta
