#include <gtest/gtest.h>

#include <cmath>

#include "styleremix/adam.hpp"
#include "styleremix/grad_check.hpp"
#include "styleremix/nn.hpp"
#include "styleremix/ops.hpp"
#include "styleremix/tape.hpp"
#include "test_support.hpp"

using namespace styleremix;
using namespace styleremix::testing;

namespace {

// max |a - b| relative to the largest oracle magnitude
double scaled_error(std::span<const double> got, std::span<const double> want)
{
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        diff = std::max(diff, std::abs(got[i] - want[i]));
        scale = std::max(scale, std::abs(want[i]));
    }
    return diff / std::max(scale, 1e-30);
}

}  // namespace

TEST(Conv2d, IdentityKernel)
{
    std::mt19937_64 rng(10);
    auto x = random_tensor<float>({1, 1, 5, 6}, rng);
    ConvKernel<float> k{Tensor<float>({1, 1, 1, 1}, {1.0f}), {}, Stride::integer(1)};
    auto y = conv2d(x, k);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, OnesCenterIsNine)
{
    auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    ConvKernel<float> k{Tensor<float>::full({1, 1, 3, 3}, 1.0f), {}, Stride::integer(1)};
    auto y = conv2d(x, k);
    const auto oracle = conv_oracle(as_doubles(x), 1, 1, 3, 3, as_doubles(k.weights), 1, 3, 1);
    EXPECT_EQ(oracle[4], 9.0);
    EXPECT_EQ(y.at({0, 0, 1, 1}), 9.0f);
}

TEST(Conv2d, StrideTwoShape)
{
    std::mt19937_64 rng(11);
    auto x = random_tensor<float>({1, 2, 8, 8}, rng);
    ConvKernel<float> k{random_tensor<float>({4, 2, 3, 3}, rng), {}, Stride::integer(2)};
    EXPECT_EQ(conv2d(x, k).shape(), (Shape{1, 4, 4, 4}));
}

TEST(Conv2d, Errors)
{
    std::mt19937_64 rng(12);
    auto x = random_tensor<float>({1, 2, 7, 8}, rng);
    ConvKernel<float> wrong_channels{random_tensor<float>({4, 3, 3, 3}, rng), {}, Stride::integer(1)};
    EXPECT_THROW(conv2d(x, wrong_channels), ShapeError);
    ConvKernel<float> strided{random_tensor<float>({4, 2, 3, 3}, rng), {}, Stride::integer(2)};
    EXPECT_THROW(conv2d(x, strided), ShapeError);
    ConvKernel<float> even{random_tensor<float>({4, 2, 2, 2}, rng), {}, Stride::integer(1)};
    EXPECT_THROW(conv2d(x, even), ShapeError);
}

TEST(Conv2d, MatchesNaiveOracleOnRandomShapes)
{
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> small(1, 5);
    std::uniform_int_distribution<int> side(1, 5);
    std::uniform_int_distribution<int> ksel(0, 2);
    std::uniform_int_distribution<int> ssel(1, 2);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = small(rng) % 2 + 1, c_in = small(rng), c_out = small(rng);
        const std::size_t stride = ssel(rng);
        const std::size_t k = 2 * ksel(rng) + 1;
        const std::size_t h = stride * side(rng) + (k > 1 ? stride : 0);
        const std::size_t w = stride * side(rng) + (k > 1 ? stride : 0);
        auto x = random_tensor<float>({n, c_in, h, w}, rng);
        ConvKernel<float> kern{random_tensor<float>({c_out, c_in, k, k}, rng),
                               random_tensor<float>({c_out}, rng), Stride::integer(stride)};
        auto y = conv2d(x, kern);
        const auto want = conv_oracle(as_doubles(x), n, c_in, h, w, as_doubles(kern.weights), c_out, k, stride,
                                      as_doubles(kern.bias));
        worst = std::max(worst, scaled_error(as_doubles(y), want));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(Conv2d, ReflectionIndex)
{
    EXPECT_EQ(reflect_index(-1, 4), 1u);
    EXPECT_EQ(reflect_index(4, 4), 2u);
    EXPECT_EQ(reflect_index(-1, 1), 0u);
    EXPECT_EQ(reflect_index(2, 3), 2u);
}

TEST(UpsampleConv, DoublesSpatialDims)
{
    std::mt19937_64 rng(14);
    auto x = random_tensor<float>({1, 64, 4, 4}, rng);
    ConvKernel<float> k{random_tensor<float>({32, 64, 3, 3}, rng), {}, Stride::half()};
    auto y = upsample_conv2d(x, k);
    EXPECT_EQ(y.shape(), (Shape{1, 32, 8, 8}));
    EXPECT_THROW(conv2d(x, k), std::invalid_argument);
}

TEST(UpsampleConv, ConstantThroughIdentity)
{
    auto x = Tensor<float>::full({1, 1, 3, 2}, 0.75f);
    ConvKernel<float> k{Tensor<float>({1, 1, 1, 1}, {1.0f}), {}, Stride::half()};
    auto y = upsample_conv2d(x, k);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 6, 4}));
    for (auto v : y.data()) EXPECT_EQ(v, 0.75f);
}

TEST(UpsampleConv, EqualsComposedOracles)
{
    std::mt19937_64 rng(15);
    auto x = random_tensor<float>({2, 3, 4, 5}, rng);
    ConvKernel<float> k{random_tensor<float>({4, 3, 3, 3}, rng), {}, Stride::half()};
    auto y = upsample_conv2d(x, k);
    const auto up = upsample_oracle(as_doubles(x), 6, 4, 5);
    const auto want = conv_oracle(up, 2, 3, 8, 10, as_doubles(k.weights), 4, 3, 1);
    EXPECT_LT(scaled_error(as_doubles(y), want), 1e-5);
}

TEST(InstanceNorm, ConstantChannelGoesToZero)
{
    auto x = Tensor<float>::full({1, 2, 3, 3}, 4.2f);
    auto y = instance_norm(x, Tensor<float>::full({2}, 1.0f), Tensor<float>::zeros({2}));
    for (auto v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(InstanceNorm, AlreadyStandardized)
{
    Tensor<double> x({1, 1, 2, 2}, {-1, 1, -1, 1});
    auto y = instance_norm(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-5);
}

TEST(InstanceNorm, StandardizesRandomInput)
{
    std::mt19937_64 rng(16);
    auto x = random_tensor<float>({2, 3, 8, 8}, rng, -3, 5);
    auto y = instance_norm(x, Tensor<float>::full({3}, 1.0f), Tensor<float>::zeros({3}));
    for (std::size_t plane = 0; plane < 6; ++plane) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < 64; ++i) m += y.data()[plane * 64 + i];
        m /= 64;
        for (std::size_t i = 0; i < 64; ++i) v += std::pow(y.data()[plane * 64 + i] - m, 2);
        v /= 64;
        EXPECT_LT(std::abs(m), 1e-5);
        EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(InstanceNorm, InverseAffineRecoversStandardStatistics)
{
    std::mt19937_64 rng(17);
    auto x = random_tensor<double>({1, 2, 6, 6}, rng, -2, 2);
    Tensor<double> gamma({2}, {2.5, 0.5});
    Tensor<double> beta({2}, {-1.0, 3.0});
    auto y = instance_norm(x, gamma, beta);
    for (std::size_t c = 0; c < 2; ++c) {
        double m = 0, v = 0;
        std::vector<double> z(36);
        for (std::size_t i = 0; i < 36; ++i) {
            z[i] = (y.data()[c * 36 + i] - beta.data()[c]) / gamma.data()[c];
            m += z[i];
        }
        m /= 36;
        for (auto zi : z) v += (zi - m) * (zi - m);
        v /= 36;
        EXPECT_NEAR(m, 0.0, 1e-9);
        EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(Activations, Relu)
{
    Tensor<float> x({3}, {-2, 0, 5});
    auto y = relu(x);
    EXPECT_EQ(y.data()[0], 0.0f);
    EXPECT_EQ(y.data()[1], 0.0f);
    EXPECT_EQ(y.data()[2], 5.0f);
}

TEST(Activations, SoftmaxClosedForms)
{
    auto u = softmax_vec(Tensor<double>::full({4}, 0.3));
    for (auto v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);
    auto p = softmax_vec(Tensor<double>({2}, {0.0, std::log(3.0)}));
    EXPECT_NEAR(p.data()[0], 0.25, 1e-15);
    EXPECT_NEAR(p.data()[1], 0.75, 1e-15);
    EXPECT_THROW(softmax_vec(Tensor<double>({2}, {0.0, NAN})), std::domain_error);
}

TEST(Activations, SoftmaxPropertiesOnRandomInputs)
{
    std::mt19937_64 rng(18);
    for (int trial = 0; trial < 200; ++trial) {
        auto x = random_tensor<float>({17}, rng, -20, 20);
        auto y = softmax_vec(x);
        double total = 0;
        for (auto v : y.data()) {
            EXPECT_GT(v, 0.0f);
            EXPECT_LT(v, 1.0f);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
        auto shifted = softmax_vec(add_scalar(x, 3.5f));
        for (std::size_t i = 0; i < 17; ++i) EXPECT_NEAR(shifted.data()[i], y.data()[i], 1e-6);
    }
}

TEST(Gram, SmallClosedForms)
{
    auto ones = Tensor<float>::full({1, 1, 2, 2}, 1.0f);
    EXPECT_EQ(gram_matrix(ones).item(), 4.0f);
    Tensor<float> orth({1, 2, 2, 2}, {1, 0, 0, 0, 0, 1, 0, 0});
    auto g = gram_matrix(orth);
    EXPECT_EQ(g.at({0, 0, 0}), 1.0f);
    EXPECT_EQ(g.at({0, 0, 1}), 0.0f);
    EXPECT_EQ(g.at({0, 1, 0}), 0.0f);
    EXPECT_EQ(g.at({0, 1, 1}), 1.0f);
}

TEST(Adam, ZeroGradientKeepsParameters)
{
    std::vector<float> p{1.0f, -2.0f};
    std::vector<float> g{0.0f, 0.0f};
    AdamState<float> state;
    adam_step<float>(p, g, state, 1e-3);
    EXPECT_EQ(p[0], 1.0f);
    EXPECT_EQ(p[1], -2.0f);
    EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, FirstStepIsSignedLearningRate)
{
    // m_hat = g, v_hat = g^2 after one step, so the update is lr * g / (|g| + eps)
    std::vector<double> p{0.5, 0.5, 0.5};
    std::vector<double> g{3.0, -0.2, 1e-3};
    AdamState<double> state;
    const double lr = 1e-3;
    adam_step<double>(p, g, state, lr);
    for (std::size_t i = 0; i < 3; ++i) {
        const double expected = 0.5 - lr * g[i] / (std::abs(g[i]) + 1e-8);
        EXPECT_NEAR(p[i], expected, 1e-15);
        EXPECT_NEAR(p[i], 0.5 - lr * (g[i] > 0 ? 1 : -1), 1e-8);
    }
}

TEST(Adam, MatchesScalarOracleOnQuadratic)
{
    // f(x) = 0.5 * a * (x - b)^2 per coordinate
    const std::vector<double> a{1.0, 4.0, 0.25};
    const std::vector<double> b{2.0, -1.0, 0.5};
    const double lr = 0.05;
    std::vector<float> params{0.0f, 0.0f, 0.0f};
    AdamState<float> state;

    std::vector<double> oracle{0.0, 0.0, 0.0};
    std::vector<double> m(3, 0.0), v(3, 0.0);
    for (int t = 1; t <= 10; ++t) {
        std::vector<float> grads(3);
        for (int i = 0; i < 3; ++i) grads[i] = static_cast<float>(a[i] * (params[i] - b[i]));
        adam_step<float>(params, grads, state, lr);
        for (int i = 0; i < 3; ++i) {
            const double g = a[i] * (oracle[i] - b[i]);
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t));
            const double vh = v[i] / (1 - std::pow(0.999, t));
            oracle[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(params[i], oracle[i], 1e-6);
}

TEST(Adam, ShapeMismatch)
{
    std::vector<float> p(3), g(2);
    AdamState<float> state;
    EXPECT_THROW(adam_step<float>(p, g, state, 1e-3), ShapeError);
}

TEST(Adam, SkipsParametersWithoutGradient)
{
    Tensor<float> used({2}, {1, 1}, true);
    Tensor<float> idle({2}, {1, 1}, true);
    Adam<float> opt;
    opt.add_parameter(used);
    opt.add_parameter(idle);
    opt.zero_grad();
    {
        Tape<float> tape;
        TapeScope<float> scope(&tape);
        tape.backward(sum(mul(used, used)));
    }
    opt.step(0.1);
    EXPECT_NE(used.data()[0], 1.0f);
    EXPECT_EQ(idle.data()[0], 1.0f);
    EXPECT_EQ(opt.state(1).step_count, 0u);
}

TEST(GradCheck, EveryNnOp)
{
    std::mt19937_64 rng(19);
    const auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    const auto proj4 = random_tensor<double>({2, 4, 4, 4}, rng);
    const auto proj2 = random_tensor<double>({2, 4, 2, 2}, rng);
    const auto proj8 = random_tensor<double>({2, 4, 8, 8}, rng);
    const auto w = random_tensor<double>({4, 3, 3, 3}, rng);
    const auto bias = random_tensor<double>({4}, rng);
    auto dot = [](const Tensor<double>& a, const Tensor<double>& b) { return sum(mul(a, b)); };

    ConvKernel<double> s1{w, bias, Stride::integer(1)};
    ConvKernel<double> s2{w, bias, Stride::integer(2)};
    ConvKernel<double> half{w, bias, Stride::half()};
    EXPECT_LT(grad_check([&](const auto& v) { return dot(conv2d(v, s1), proj4); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(conv2d(v, s2), proj2); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(upsample_conv2d(v, half), proj8); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& kw) {
                  return dot(conv2d(x, ConvKernel<double>{kw, bias, Stride::integer(1)}), proj4);
              }, w), 1e-4);
    EXPECT_LT(grad_check([&](const auto& b) {
                  return dot(conv2d(x, ConvKernel<double>{w, b, Stride::integer(2)}), proj2);
              }, bias), 1e-4);

    const auto proj3 = random_tensor<double>({2, 3, 4, 4}, rng);
    const auto gamma = random_tensor<double>({3}, rng, 0.5, 1.5);
    const auto beta = random_tensor<double>({3}, rng);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(instance_norm(v, gamma, beta), proj3); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& g) { return dot(instance_norm(x, g, beta), proj3); }, gamma), 1e-4);
    EXPECT_LT(grad_check([&](const auto& b) { return dot(instance_norm(x, gamma, b), proj3); }, beta), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(relu(v), proj3); }, x), 1e-4);

    const auto logits = random_tensor<double>({6}, rng, -2, 2);
    const auto proj6 = random_tensor<double>({6}, rng);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(softmax_vec(v), proj6); }, logits), 1e-4);

    const auto cw = random_tensor<double>({3}, rng);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(scale_channels(v, cw), proj3); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(scale_channels(x, v), proj3); }, cw), 1e-4);
    const auto projw = random_tensor<double>({4, 3, 3, 3}, rng);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(scale_input_slices(v, cw), projw); }, w), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(scale_input_slices(w, v), projw); }, cw), 1e-4);

    const auto projg = random_tensor<double>({2, 3, 3}, rng);
    const auto proj_up = random_tensor<double>({2, 3, 8, 8}, rng);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(gram_matrix(v), projg); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const auto& v) { return dot(upsample_nearest2x(v), proj_up); }, x), 1e-4);
}
