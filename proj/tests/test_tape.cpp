#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "vsi/grad_check.hpp"
#include "vsi/params.hpp"
#include "vsi/rng.hpp"
#include "vsi/tape.hpp"

using vsi::GradMap;
using vsi::Params;
using vsi::Rng;
using vsi::Tape;
using vsi::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST(Matmul, IdentityAndZero) {
    Tape tape;
    auto I = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    auto A = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    auto C = tape.matmul(I, A);
    EXPECT_EQ(tape.value(C).data, (std::vector<double>{1, 2, 3, 4}));

    auto Z = tape.constant(Tensor::matrix({{0}, {0}}));
    auto CZ = tape.matmul(I, Z);
    EXPECT_EQ(tape.value(CZ).data, (std::vector<double>{0, 0}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
    Rng rng(7);
    Tensor A = random_tensor({3, 4}, rng);
    Tensor B = random_tensor({4, 2}, rng);
    Tape tape;
    auto C = tape.matmul(tape.constant(A), tape.constant(B));
    auto ref = oracle::matmul(A.data, B.data, 3, 4, 2);
    for (std::size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(tape.value(C).data[i], ref[i], 1e-12);
}

TEST(Matmul, RandomSizesMatchOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = static_cast<int>(rng.uniform_int(1, 16));
        const int k = static_cast<int>(rng.uniform_int(1, 16));
        const int n = static_cast<int>(rng.uniform_int(1, 16));
        Tensor A = random_tensor({m, k}, rng);
        Tensor B = random_tensor({k, n}, rng);
        Tape tape;
        auto C = tape.matmul(tape.constant(A), tape.constant(B));
        auto ref = oracle::matmul(A.data, B.data, m, k, n);
        for (std::size_t i = 0; i < ref.size(); ++i)
            ASSERT_NEAR(tape.value(C).data[i], ref[i], 1e-12);
    }
}

TEST(Matmul, ShapeMismatchThrows) {
    Tape tape;
    auto A = tape.constant(Tensor::zeros({2, 3}));
    auto B = tape.constant(Tensor::zeros({2, 3}));
    EXPECT_THROW(tape.matmul(A, B), vsi::ShapeError);
}

TEST(Softmax, SymmetryAndStability) {
    Tape tape;
    auto y = tape.softmax_rows(tape.constant(Tensor::row({0, 0})));
    EXPECT_DOUBLE_EQ(tape.value(y).data[0], 0.5);
    EXPECT_DOUBLE_EQ(tape.value(y).data[1], 0.5);

    auto big = tape.softmax_rows(tape.constant(Tensor::row({1000, 0})));
    EXPECT_NEAR(tape.value(big).data[0], 1.0, 1e-12);
    EXPECT_NEAR(tape.value(big).data[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
    Tape tape;
    auto y = tape.softmax_rows(tape.constant(Tensor::row({1, 2, 3})));
    auto ref = oracle::softmax_long_double({1, 2, 3});
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(tape.value(y).data[j], ref[j], 1e-14);
}

TEST(Softmax, RowsSumToOneAndRangeHolds) {
    Rng rng(3);
    Tensor X = random_tensor({5, 7}, rng, -30.0, 30.0);
    Tape tape;
    auto y = tape.softmax_rows(tape.constant(X));
    const Tensor& Y = tape.value(y);
    for (int i = 0; i < 5; ++i) {
        double s = 0.0;
        for (int j = 0; j < 7; ++j) {
            const double v = Y.at(i, j);
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
    Tape tape;
    Tensor mask = Tensor::matrix({{1, 0, 1}, {0, 1, 1}});
    auto y = tape.softmax_rows(tape.constant(Tensor::matrix({{5, 99, 1}, {2, 3, 4}})), mask);
    const Tensor& Y = tape.value(y);
    EXPECT_EQ(Y.at(0, 1), 0.0);
    EXPECT_EQ(Y.at(1, 0), 0.0);
    EXPECT_NEAR(Y.at(0, 0) + Y.at(0, 2), 1.0, 1e-12);
}

TEST(Softmax, FullyMaskedRowThrows) {
    Tape tape;
    Tensor mask = Tensor::matrix({{0, 0}});
    EXPECT_THROW(tape.softmax_rows(tape.constant(Tensor::row({1, 2})), mask), vsi::MaskError);
}

TEST(Elementwise, ReluGeluConcat) {
    Tape tape;
    auto r = tape.relu(tape.constant(Tensor::vec({-1, 0, 2})));
    EXPECT_EQ(tape.value(r).data, (std::vector<double>{0, 0, 2}));

    auto g = tape.gelu(tape.constant(Tensor::vec({0})));
    EXPECT_DOUBLE_EQ(tape.value(g).data[0], 0.0);

    auto a = tape.constant(Tensor::zeros({3, 2}));
    auto b = tape.constant(Tensor::filled({2, 2}, 1.0));
    auto c = tape.concat_rows({a, b});
    EXPECT_EQ(tape.value(c).shape, (std::vector<int>{5, 2}));
    EXPECT_EQ(tape.value(c).at(3, 0), 1.0);
    EXPECT_EQ(tape.value(c).at(2, 0), 0.0);
}

TEST(Backward, SquareLoss) {
    Tape tape;
    Params p;
    p.add("x", Tensor::vec({3}));
    auto x = tape.param("x", p.at("x"));
    auto loss = tape.sum(tape.hadamard(x, x));
    GradMap g = tape.backward(loss);
    EXPECT_DOUBLE_EQ(g.at("x").data[0], 6.0);
}

TEST(Backward, UnreachedParamGetsZero) {
    Tape tape;
    Params p;
    p.add("x", Tensor::vec({2}));
    p.add("unused", Tensor::vec({1, 2, 3}));
    auto x = tape.param("x", p.at("x"));
    tape.param("unused", p.at("unused"));
    auto loss = tape.sum(x);
    GradMap g = tape.backward(loss);
    EXPECT_EQ(g.at("unused").data, (std::vector<double>{0, 0, 0}));
    EXPECT_EQ(g.at("x").data, (std::vector<double>{1, 1}));
}

TEST(Backward, NonScalarLossThrows) {
    Tape tape;
    auto x = tape.constant(Tensor::vec({1, 2}));
    EXPECT_THROW(tape.backward(x), vsi::ShapeError);
}

// backward(L1 + L2) must equal backward(L1) + backward(L2) bitwise. Exactness
// needs the first-built loss to contribute a single accumulation per param;
// the second-built loss runs first in reverse order and starts from zero in
// both settings.
TEST(Backward, LinearityIsExact) {
    Params p;
    p.add("x", Tensor::vec({1.25, -0.75, 2.5}));

    auto build = [&](Tape& t, Tape::Node& l1, Tape::Node& l2) {
        auto x = t.param("x", p.at("x"));
        l1 = t.sum(x);                      // single contribution to x
        l2 = t.sum(t.hadamard(x, x));       // double contribution to x
    };

    Tape combined;
    Tape::Node l1, l2;
    build(combined, l1, l2);
    GradMap gc = combined.backward(combined.add(l1, l2));

    Tape t1;
    Tape::Node a1, a2;
    build(t1, a1, a2);
    GradMap g1 = t1.backward(a1);
    Tape t2;
    build(t2, a1, a2);
    GradMap g2 = t2.backward(a2);

    for (std::size_t i = 0; i < gc.at("x").size(); ++i) {
        const double sum = g2.at("x").data[i] + g1.at("x").data[i];
        EXPECT_EQ(gc.at("x").data[i], sum);
    }
}

TEST(FiniteDifference, SquareAndRelu) {
    Params p;
    p.add("x", Tensor::vec({3}));
    auto fsq = [](const Params& q) { return q.at("x").data[0] * q.at("x").data[0]; };
    GradMap g = vsi::finite_difference_grad(fsq, p);
    EXPECT_NEAR(g.at("x").data[0], 6.0, 1e-9);

    Params pr;
    pr.add("x", Tensor::vec({1}));
    auto frelu = [](const Params& q) {
        Tape t;
        auto x = t.param("x", q.at("x"));
        return t.value(t.sum(t.relu(x))).data[0];
    };
    GradMap gr = vsi::finite_difference_grad(frelu, pr);
    EXPECT_NEAR(gr.at("x").data[0], 1.0, 1e-9);
}

namespace {

// One graph through every taped op; used for the all-ops gradient check.
double all_ops_forward(const Params& q, GradMap* analytic) {
    Tape t;
    auto table = t.param("table", q.at("table"));
    auto w1 = t.param("w1", q.at("w1"));
    auto bias = t.param("bias", q.at("bias"));
    auto gamma = t.param("gamma", q.at("gamma"));
    auto beta = t.param("beta", q.at("beta"));
    auto wrow = t.param("wrow", q.at("wrow"));

    auto E = t.embed(table, {0, 2, 5});                    // {3,4}
    auto H = t.add_row_bias(t.matmul(E, w1), bias);        // {3,4}
    auto G = t.gelu(H);
    auto R = t.relu(t.add(H, H));
    auto M = t.add(G, R);
    auto S = t.scale(t.matmul(M, t.transpose(M)), 0.5);    // {3,3}
    Tensor mask = Tensor::matrix({{1, 1, 0}, {1, 1, 1}, {0, 1, 1}});
    auto P = t.softmax_rows(S, mask);
    auto Y = t.matmul(P, M);                               // {3,4}
    auto LN = t.layer_norm(Y, gamma, beta);
    auto CR = t.concat_rows({LN, M});                      // {6,4}
    auto CC = t.concat_cols({CR, CR});                     // {6,8}
    auto SL = t.slice_cols(t.slice_rows(CC, 1, 5), 2, 7);  // {4,5}
    auto HD = t.hadamard(SL, SL);
    auto part1 = t.scale(t.sum(HD), 0.05);
    auto logits = t.matmul(wrow, t.transpose(LN));         // {1,3}
    auto part2 = t.softmax_cross_entropy(logits, 1);
    auto loss = t.add(part1, part2);
    const double value = t.value(loss).data[0];
    if (analytic) *analytic = t.backward(loss);
    return value;
}

}  // namespace

TEST(FiniteDifference, EveryOpPassesGradientCheck) {
    Rng rng(42);
    Params p;
    p.add("table", random_tensor({6, 4}, rng, -0.8, 0.8));
    p.add("w1", random_tensor({4, 4}, rng, -0.8, 0.8));
    p.add("bias", random_tensor({4}, rng, 0.2, 0.6));
    p.add("gamma", random_tensor({4}, rng, 0.8, 1.2));
    p.add("beta", random_tensor({4}, rng, -0.2, 0.2));
    p.add("wrow", random_tensor({1, 4}, rng, -0.8, 0.8));

    GradMap analytic;
    all_ops_forward(p, &analytic);
    GradMap numeric =
        vsi::finite_difference_grad([](const Params& q) { return all_ops_forward(q, nullptr); }, p);
    EXPECT_LT(vsi::max_relative_gap(analytic, numeric), 1e-4);
}

TEST(Tape, NumericErrorOnNonFinite) {
    Tape tape;
    auto big = tape.constant(Tensor::row({1e308, 1e308}));
    EXPECT_THROW(tape.add(big, big), vsi::NumericError);
}

TEST(Tape, RepeatedParamRegistrationSharesNode) {
    Params p;
    p.add("x", Tensor::vec({2, 2}));
    Tape tape;
    auto a = tape.param("x", p.at("x"));
    auto b = tape.param("x", p.at("x"));
    EXPECT_EQ(a, b);
    auto loss = tape.sum(tape.add(a, b));
    GradMap g = tape.backward(loss);
    EXPECT_EQ(g.at("x").data, (std::vector<double>{2, 2}));
}
