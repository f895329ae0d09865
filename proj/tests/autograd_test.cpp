#include "phenalign/graph.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "phenalign/rng.hpp"
#include "phenalign/tensor.hpp"

using phenalign::GradientMap;
using phenalign::Graph;
using phenalign::Rng;
using phenalign::Shape;
using phenalign::Tensor;
using phenalign::Value;
using phenalign::grad_check;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-6;

Value randn_param(Graph& g, const std::string& name, Shape s, Rng& rng,
                  double scale = 1.0, double offset = 0.0) {
    Tensor t = Tensor::randn(std::move(s), rng, scale);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += offset;
    return g.param(name, t);
}

// Reduce an arbitrary value to a scalar that is sensitive to every entry.
Value probe_loss(Graph& g, Value y, Rng& rng) {
    Tensor w = Tensor::randn(g.value(y).shape(), rng, 1.0);
    return g.sum(g.mul(y, g.input(w)));
}

}  // namespace

TEST(Autograd, Add) {
    Graph g;
    Rng rng(1);
    Value a = randn_param(g, "a", {3, 4}, rng);
    Value b = randn_param(g, "b", {3, 4}, rng);
    EXPECT_LT(grad_check(g, probe_loss(g, g.add(a, b), rng), kEps), kTol);
}

TEST(Autograd, Sub) {
    Graph g;
    Rng rng(2);
    Value a = randn_param(g, "a", {2, 5}, rng);
    Value b = randn_param(g, "b", {2, 5}, rng);
    EXPECT_LT(grad_check(g, probe_loss(g, g.sub(a, b), rng), kEps), kTol);
}

TEST(Autograd, Mul) {
    Graph g;
    Rng rng(3);
    Value a = randn_param(g, "a", {4}, rng);
    Value b = randn_param(g, "b", {4}, rng);
    EXPECT_LT(grad_check(g, probe_loss(g, g.mul(a, b), rng), kEps), kTol);
}

TEST(Autograd, Div) {
    Graph g;
    Rng rng(4);
    Value a = randn_param(g, "a", {3, 3}, rng);
    Value b = randn_param(g, "b", {3, 3}, rng, 0.1, 2.0);
    EXPECT_LT(grad_check(g, probe_loss(g, g.div(a, b), rng), kEps), kTol);
}

TEST(Autograd, ScalarMulAdd) {
    Graph g;
    Rng rng(5);
    Value a = randn_param(g, "a", {2, 3}, rng);
    Value y = g.scalar_add(g.scalar_mul(a, -1.7), 0.25);
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, ExpLog) {
    Graph g;
    Rng rng(6);
    Value a = randn_param(g, "a", {3, 2}, rng, 0.5);
    Value b = randn_param(g, "b", {3, 2}, rng, 0.25, 2.0);
    Value y = g.add(g.exp(a), g.log(b));
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, SigmoidFamily) {
    Graph g;
    Rng rng(7);
    Value a = randn_param(g, "a", {4, 3}, rng, 2.0);
    Value y = g.add(g.sigmoid(a), g.add(g.log_sigmoid(a), g.tanh(a)));
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, SqrtReciprocal) {
    Graph g;
    Rng rng(8);
    Value a = randn_param(g, "a", {5}, rng, 0.2, 2.0);
    Value y = g.add(g.sqrt(a), g.reciprocal(a));
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, ScaleShiftByScalarNode) {
    Graph g;
    Rng rng(9);
    Value x = randn_param(g, "x", {3, 4}, rng);
    Value s = randn_param(g, "s", {}, rng, 0.3, 1.5);
    Value t = randn_param(g, "t", {}, rng);
    Value y = g.shift_by(g.scale_by(x, s), t);
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, Matmul) {
    Graph g;
    Rng rng(10);
    Value a = randn_param(g, "a", {3, 4}, rng);
    Value b = randn_param(g, "b", {4, 5}, rng);
    EXPECT_LT(grad_check(g, probe_loss(g, g.matmul(a, b), rng), kEps), kTol);
}

TEST(Autograd, MatmulVectorLeft) {
    Graph g;
    Rng rng(11);
    Value a = randn_param(g, "a", {4}, rng);
    Value b = randn_param(g, "b", {4, 3}, rng);
    Value y = g.matmul(a, b);
    EXPECT_EQ(g.value(y).shape(), Shape{3});
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, MatmulNT) {
    Graph g;
    Rng rng(12);
    Value a = randn_param(g, "a", {3, 4}, rng);
    Value b = randn_param(g, "b", {5, 4}, rng);
    Value y = g.matmul_nt(a, b);
    EXPECT_EQ(g.value(y).rows(), 3u);
    EXPECT_EQ(g.value(y).cols(), 5u);
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);

    // Same result as matmul against an explicit transpose.
    Graph h;
    Rng rng2(12);
    Value a2 = randn_param(h, "a", {3, 4}, rng2);
    Value b2 = randn_param(h, "b", {5, 4}, rng2);
    Value y2 = h.matmul(a2, h.transpose(b2));
    for (std::size_t i = 0; i < h.value(y2).size(); ++i)
        ASSERT_DOUBLE_EQ(g.value(y)[i], h.value(y2)[i]);
}

TEST(Autograd, Transpose) {
    Graph g;
    Rng rng(13);
    Value a = randn_param(g, "a", {2, 5}, rng);
    EXPECT_LT(grad_check(g, probe_loss(g, g.transpose(a), rng), kEps), kTol);
}

TEST(Autograd, SoftmaxRows) {
    Graph g;
    Rng rng(14);
    Value a = randn_param(g, "a", {4, 6}, rng, 2.0);
    Value y = g.softmax_rows(a);
    const Tensor& yv = g.value(y);
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 6; ++c) s += yv.at(r, c);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, SoftmaxKnownValues) {
    Graph g;
    Value a = g.input(Tensor::matrix(1, 2, {0.0, std::log(3.0)}));
    Value y = g.softmax_rows(a);
    EXPECT_NEAR(g.value(y)[0], 0.25, 1e-12);
    EXPECT_NEAR(g.value(y)[1], 0.75, 1e-12);
}

TEST(Autograd, SoftmaxStableUnderLargeInputs) {
    Graph g;
    Value a = g.input(Tensor::matrix(1, 2, {1000.0, 1000.0}));
    Value y = g.softmax_rows(a);
    EXPECT_TRUE(g.value(y).all_finite());
    EXPECT_NEAR(g.value(y)[0], 0.5, 1e-12);
}

TEST(Autograd, LogSigmoidStableInTails) {
    Graph g;
    Value a = g.input(Tensor::vec({-800.0, 800.0}));
    Value y = g.log_sigmoid(a);
    EXPECT_TRUE(g.value(y).all_finite());
    EXPECT_NEAR(g.value(y)[0], -800.0, 1e-9);
    EXPECT_NEAR(g.value(y)[1], 0.0, 1e-9);
}

TEST(Autograd, NormalizeRows) {
    Graph g;
    Rng rng(15);
    Value a = randn_param(g, "a", {3, 5}, rng, 1.0, 0.5);
    Value y = g.normalize_rows(a);
    const Tensor& yv = g.value(y);
    for (std::size_t r = 0; r < 3; ++r) {
        double n = 0.0;
        for (std::size_t c = 0; c < 5; ++c) n += yv.at(r, c) * yv.at(r, c);
        EXPECT_NEAR(n, 1.0, 1e-12);
    }
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, NormalizeRowsZeroRowGuard) {
    Graph g;
    Value a = g.param("a", Tensor::matrix(2, 3, {0, 0, 0, 1, 2, 2}));
    Value y = g.normalize_rows(a);
    EXPECT_EQ(g.value(y).at(0, 0), 0.0);
    EXPECT_NEAR(g.value(y).at(1, 2), 2.0 / 3.0, 1e-12);
    Value loss = g.sum(y);
    g.backward(loss);
    EXPECT_EQ(g.parameter_gradient("a").at(0, 1), 0.0);
}

TEST(Autograd, LayerNormRows) {
    Graph g;
    Rng rng(16);
    Value a = randn_param(g, "a", {4, 8}, rng, 1.5);
    EXPECT_LT(grad_check(g, probe_loss(g, g.layer_norm_rows(a), rng), kEps), kTol);
}

TEST(Autograd, Reductions) {
    Graph g;
    Rng rng(17);
    Value a = randn_param(g, "a", {3, 4}, rng);
    Value y = g.add(g.scalar_mul(g.sum(a), 0.5), g.mean(a));
    EXPECT_LT(grad_check(g, y, kEps), kTol);
}

TEST(Autograd, RowSumColMean) {
    Graph g;
    Rng rng(18);
    Value a = randn_param(g, "a", {3, 4}, rng);
    Value y = probe_loss(g, g.row_sum(a), rng);
    Value z = probe_loss(g, g.col_mean(a), rng);
    EXPECT_LT(grad_check(g, g.add(y, z), kEps), kTol);
}

TEST(Autograd, Norms) {
    Graph g;
    Rng rng(19);
    Value a = randn_param(g, "a", {3, 4}, rng, 1.0, 0.2);
    Value y = g.add(g.l2_norm(a), g.sum(g.l2_norm_rows(a)));
    EXPECT_LT(grad_check(g, y, kEps), kTol);
}

TEST(Autograd, CosineRows) {
    Graph g;
    Rng rng(20);
    Value a = randn_param(g, "a", {4, 6}, rng, 1.0, 0.3);
    Value b = randn_param(g, "b", {4, 6}, rng, 1.0, -0.2);
    Value y = g.cosine_rows(a, b);
    const Tensor& yv = g.value(y);
    for (std::size_t i = 0; i < yv.size(); ++i) {
        EXPECT_GE(yv[i], -1.0 - 1e-12);
        EXPECT_LE(yv[i], 1.0 + 1e-12);
    }
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, CosineRowsDegenerateGuard) {
    Graph g;
    Value a = g.param("a", Tensor::matrix(2, 2, {0, 0, 3, 4}));
    Value b = g.param("b", Tensor::matrix(2, 2, {1, 1, 3, 4}));
    Value y = g.cosine_rows(a, b);
    EXPECT_EQ(g.value(y)[0], 0.0);
    EXPECT_NEAR(g.value(y)[1], 1.0, 1e-12);
    g.backward(g.sum(y));
    EXPECT_EQ(g.parameter_gradient("a").at(0, 0), 0.0);
    EXPECT_EQ(g.parameter_gradient("b").at(0, 0), 0.0);
}

TEST(Autograd, RowsDiv) {
    Graph g;
    Rng rng(21);
    Value x = randn_param(g, "x", {3, 4}, rng);
    Value d = randn_param(g, "d", {3}, rng, 0.2, 2.0);
    EXPECT_LT(grad_check(g, probe_loss(g, g.rows_div(x, d), rng), kEps), kTol);
}

TEST(Autograd, RowsAdd) {
    Graph g;
    Rng rng(27);
    Value x = randn_param(g, "x", {3, 4}, rng);
    Value v = randn_param(g, "v", {3}, rng);
    EXPECT_LT(grad_check(g, probe_loss(g, g.rows_add(x, v), rng), kEps), kTol);
}

TEST(Autograd, ColsMulAdd) {
    Graph g;
    Rng rng(22);
    Value x = randn_param(g, "x", {3, 4}, rng);
    Value gv = randn_param(g, "g", {4}, rng, 0.5, 1.0);
    Value bv = randn_param(g, "b", {4}, rng);
    Value y = g.cols_add(g.cols_mul(x, gv), bv);
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, ConcatAxis0) {
    Graph g;
    Rng rng(23);
    Value a = randn_param(g, "a", {2, 3}, rng);
    Value b = randn_param(g, "b", {1, 3}, rng);
    Value c = randn_param(g, "c", {3}, rng);
    Value y = g.concat({a, b, c}, 0);
    EXPECT_EQ(g.value(y).rows(), 4u);
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, ConcatAxis1) {
    Graph g;
    Rng rng(24);
    Value a = randn_param(g, "a", {2, 3}, rng);
    Value b = randn_param(g, "b", {2, 2}, rng);
    Value y = g.concat({a, b}, 1);
    EXPECT_EQ(g.value(y).cols(), 5u);
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);
}

TEST(Autograd, Slices) {
    Graph g;
    Rng rng(25);
    Value a = randn_param(g, "a", {4, 6}, rng);
    Value y = g.slice_rows(a, 1, 3);
    Value z = g.slice_cols(a, 2, 6);
    Value loss = g.add(probe_loss(g, y, rng), probe_loss(g, z, rng));
    EXPECT_LT(grad_check(g, loss, kEps), kTol);
}

TEST(Autograd, EmbedGatherScatter) {
    Graph g;
    Rng rng(26);
    Value table = randn_param(g, "table", {5, 3}, rng);
    Value y = g.embed(table, {2, 0, 2});
    EXPECT_EQ(g.value(y).rows(), 3u);
    EXPECT_LT(grad_check(g, probe_loss(g, y, rng), kEps), kTol);

    // Repeated ids must accumulate in the table gradient.
    Graph h;
    Value t2 = h.param("t", Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
    Value e = h.embed(t2, {1, 1});
    h.backward(h.sum(e));
    EXPECT_EQ(h.parameter_gradient("t").at(1, 0), 2.0);
    EXPECT_EQ(h.parameter_gradient("t").at(0, 0), 0.0);
}

TEST(Autograd, CompositeExpressionSweep) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Graph g;
        Rng rng(seed + 1000);
        Value w = randn_param(g, "w", {4, 4}, rng, 0.7);
        Value x = randn_param(g, "x", {3, 4}, rng, 0.7);
        Value b = randn_param(g, "b", {4}, rng, 0.3);
        Value h = g.tanh(g.cols_add(g.matmul(x, w), b));
        Value a = g.softmax_rows(g.matmul_nt(h, h));
        Value y = g.layer_norm_rows(g.matmul(a, h));
        Value loss = g.mean(g.mul(y, y));
        ASSERT_LT(grad_check(g, loss, kEps), kTol) << "seed " << seed;
    }
}

TEST(Autograd, GradientAccumulatesAcrossConsumers) {
    Graph g;
    Value x = g.param("x", Tensor::scalar(3.0));
    Value y = g.add(x, x);
    g.backward(y);
    EXPECT_EQ(g.parameter_gradient("x").item(), 2.0);
}

TEST(Autograd, SecondBackwardResetsGradients) {
    Graph g;
    Value x = g.param("x", Tensor::scalar(2.0));
    Value y = g.mul(x, x);
    g.backward(y);
    g.backward(y);
    EXPECT_EQ(g.parameter_gradient("x").item(), 4.0);
}

TEST(Autograd, UnreachableParameterGetsZeroGradient) {
    Graph g;
    Value x = g.param("x", Tensor::scalar(1.0));
    g.param("orphan", Tensor::vec({1.0, 2.0}));
    g.backward(g.mul(x, x));
    GradientMap grads = g.parameter_gradients();
    EXPECT_EQ(grads.at("orphan")[0], 0.0);
    EXPECT_EQ(grads.at("orphan")[1], 0.0);
    EXPECT_EQ(grads.at("x").item(), 2.0);
}

TEST(Autograd, LossWithNoParameterAncestors) {
    Graph g;
    g.param("p", Tensor::scalar(5.0));
    Value c = g.input(Tensor::scalar(2.0));
    g.backward(g.mul(c, c));
    EXPECT_EQ(g.parameter_gradients().at("p").item(), 0.0);
}

TEST(Autograd, NonScalarLossThrows) {
    Graph g;
    Value x = g.param("x", Tensor::vec({1.0, 2.0}));
    EXPECT_THROW(g.backward(x), phenalign::ContractError);
}

TEST(Autograd, DuplicateParameterNameThrows) {
    Graph g;
    g.param("w", Tensor::scalar(1.0));
    EXPECT_THROW(g.param("w", Tensor::scalar(2.0)), phenalign::ContractError);
}

TEST(Autograd, ShapeMismatchesThrow) {
    Graph g;
    Value a = g.input(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Value b = g.input(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
    EXPECT_THROW(g.add(a, b), phenalign::DimensionError);
    EXPECT_THROW(g.matmul(a, a), phenalign::DimensionError);
    EXPECT_THROW(g.cosine_rows(a, b), phenalign::DimensionError);
    EXPECT_THROW(g.concat({a, b}, 0), phenalign::DimensionError);
    EXPECT_THROW(g.concat({a, b}, 2), phenalign::ContractError);
    EXPECT_THROW(g.slice_rows(a, 1, 4), phenalign::IndexError);
    EXPECT_THROW(g.slice_cols(a, 3, 3), phenalign::IndexError);
    EXPECT_THROW(g.embed(a, {2}), phenalign::LookupError);
}

TEST(Autograd, BackwardIsBitwiseDeterministic) {
    auto run = [] {
        Graph g;
        Rng rng(404);
        Value w = randn_param(g, "w", {6, 6}, rng);
        Value x = randn_param(g, "x", {4, 6}, rng);
        Value y = g.softmax_rows(g.matmul_nt(g.tanh(g.matmul(x, w)), x));
        g.backward(g.mean(g.mul(y, y)));
        return g.parameter_gradients();
    };
    GradientMap g1 = run();
    GradientMap g2 = run();
    for (const auto& [name, t] : g1) {
        const phenalign::Tensor& u = g2.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(t[i], u[i]) << name;
    }
}

TEST(Autograd, RecomputeTracksLeafMutation) {
    Graph g;
    Value x = g.param("x", Tensor::scalar(2.0));
    Value y = g.mul(x, x);
    EXPECT_EQ(g.value(y).item(), 4.0);
    g.mutable_value(x)[0] = 5.0;
    g.recompute();
    EXPECT_EQ(g.value(y).item(), 25.0);
}

TEST(Autograd, GradCheckRejectsBadEps) {
    Graph g;
    Value x = g.param("x", Tensor::scalar(1.0));
    Value y = g.mul(x, x);
    EXPECT_THROW(grad_check(g, y, 0.0), phenalign::ContractError);
    EXPECT_THROW(grad_check(g, y, 1e-2), phenalign::ContractError);
}

TEST(Autograd, GradOfUnrequestedValueThrows) {
    Graph g;
    Value c = g.input(Tensor::scalar(1.0));
    Value x = g.param("x", Tensor::scalar(1.0));
    g.backward(g.mul(x, x));
    EXPECT_THROW(g.grad(c), phenalign::ContractError);
}
