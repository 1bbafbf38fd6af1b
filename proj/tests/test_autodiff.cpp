#include <gtest/gtest.h>

#include "styleremix/grad_check.hpp"
#include "styleremix/ops.hpp"
#include "styleremix/tape.hpp"
#include "test_support.hpp"

using namespace styleremix;
using styleremix::testing::random_tensor;

TEST(Tensor, ShapeMustMatchData)
{
    EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
    Tensor<float> t({2, 3}, std::vector<float>(6, 1.0f));
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_FALSE(t.has_grad());
}

TEST(PrimitiveOps, AddElementwise)
{
    Tensor<float> a({2}, {1, 2});
    Tensor<float> b({2}, {3, 4});
    auto c = add(a, b);
    EXPECT_EQ(c.data()[0], 4.0f);
    EXPECT_EQ(c.data()[1], 6.0f);
}

TEST(PrimitiveOps, MismatchNamesOpAndShapes)
{
    Tensor<float> a = Tensor<float>::zeros({2, 3});
    Tensor<float> b = Tensor<float>::zeros({3, 2});
    try {
        add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[3,2]"), std::string::npos);
    }
    EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(PrimitiveOps, MatmulIdentity)
{
    std::mt19937_64 rng(1);
    auto x = random_tensor<float>({3, 5}, rng);
    Tensor<float> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = matmul(eye, x);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(PrimitiveOps, SumMatchesLoop)
{
    std::mt19937_64 rng(2);
    auto x = random_tensor<double>({4, 4}, rng);
    double expected = 0;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) expected += x.at({r, c});
    EXPECT_NEAR(sum(x).item(), expected, 1e-12);
    EXPECT_NEAR(mean(x).item(), expected / 16.0, 1e-12);
}

TEST(PrimitiveOps, TransposeAndReshape)
{
    Tensor<float> a({2, 3}, {1, 2, 3, 4, 5, 6});
    auto t = transpose(a);
    EXPECT_EQ(t.shape(), (Shape{3, 2}));
    EXPECT_EQ(t.at({2, 1}), 6.0f);
    EXPECT_EQ(t.at({0, 1}), 4.0f);
    EXPECT_THROW(reshape(a, {4, 2}), ShapeError);
    EXPECT_EQ(reshape(a, {6}).at({4}), 5.0f);
}

TEST(Backward, SumGivesOnes)
{
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    Tensor<float> x({2, 2}, {1, 2, 3, 4}, true);
    auto loss = sum(x);
    tape.backward(loss);
    for (auto g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, QuadraticDerivative)
{
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    Tensor<float> x({2}, {1, 2}, true);
    tape.backward(sum(mul(x, x)));
    EXPECT_EQ(x.grad()[0], 2.0f);
    EXPECT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, NonScalarLossRejected)
{
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    Tensor<float> x({2}, {1, 2}, true);
    auto y = scale(x, 2.0f);
    EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, ClearedTapeRejected)
{
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    Tensor<float> x({2}, {1, 2}, true);
    auto loss = sum(x);
    tape.clear();
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_THROW(tape.backward(loss), TapeError);
    // reusing a stale intermediate on the fresh tape is also refused
    EXPECT_THROW(add(loss, loss), TapeError);
}

TEST(Backward, UnreachableLeafGetsZeroGrad)
{
    Tape<double> tape;
    TapeScope<double> scope(&tape);
    Tensor<double> x({3}, {1, 2, 3}, true);
    Tensor<double> unused({3}, {4, 5, 6}, true);
    auto side = mul(unused, unused);  // recorded, but not part of the loss
    (void)side;
    tape.backward(sum(scale(x, 3.0)));
    ASSERT_TRUE(unused.has_grad());
    for (auto g : unused.grad()) EXPECT_EQ(g, 0.0);
    for (auto g : x.grad()) EXPECT_EQ(g, 3.0);
}

TEST(Backward, RepeatedBackwardIsBitIdentical)
{
    std::mt19937_64 rng(3);
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    auto a = random_tensor<float>({4, 6}, rng, -1, 1, true);
    auto b = random_tensor<float>({6, 3}, rng, -1, 1, true);
    auto loss = sum(mul(matmul(a, b), matmul(a, b)));
    tape.backward(loss);
    std::vector<float> first(a.grad().begin(), a.grad().end());
    tape.backward(loss);
    std::vector<float> second(a.grad().begin(), a.grad().end());
    EXPECT_EQ(first, second);
}

TEST(Backward, NoTapeMeansNoRecording)
{
    Tensor<float> x({2}, {1, 2}, true);
    auto y = scale(x, 2.0f);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
}

TEST(GradCheck, SumOfSquaresIsExact)
{
    std::mt19937_64 rng(4);
    auto x = random_tensor<double>({5}, rng);
    const double err = grad_check([](const Tensor<double>& v) { return sum(mul(v, v)); }, x, 1e-5);
    EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, NonFiniteRaises)
{
    Tensor<double> x({1}, {1.0});
    auto blowup = [](const Tensor<double>& v) {
        return sum(scale(v, std::numeric_limits<double>::infinity()));
    };
    EXPECT_THROW(grad_check(blowup, x, 1e-5), std::domain_error);
}

// Every primitive, composed with a random projection so that no gradient
// entry is structurally zero.
TEST(GradCheck, EveryPrimitive)
{
    std::mt19937_64 rng(5);
    const auto other = random_tensor<double>({3, 4}, rng);
    const auto right = random_tensor<double>({4, 2}, rng);
    const auto proj = random_tensor<double>({3, 4}, rng);
    auto project = [&](const Tensor<double>& y) { return sum(mul(y, proj)); };
    const auto x = random_tensor<double>({3, 4}, rng);

    EXPECT_LT(grad_check([&](const auto& v) { return project(add(v, other)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return project(sub(other, v)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return project(mul(v, other)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return project(scale(v, 1.7)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return project(mul(add_scalar(v, 0.3), v)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return sum(mul(matmul(v, right), matmul(v, right))); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return sum(mul(matmul(transpose(proj), v), matmul(transpose(proj), v))); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return sum(mul(transpose(v), transpose(proj))); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return project(reshape(reshape(v, {12}), {3, 4})); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return mul(mean(v), sum(mul(v, proj))); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return squared_distance(v, other); }, x), 1e-4);
}
