#pragma once

// Shared helpers and independent reference implementations for the test
// suites. Nothing here calls into the library's op implementations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "styleremix/tensor.hpp"

namespace styleremix::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8)
{
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

template <typename T>
std::vector<double> as_doubles(const Tensor<T>& t)
{
    return std::vector<double>(t.data().begin(), t.data().end());
}

/// Reflection-padded copy of one plane, built by explicit mirroring.
inline std::vector<double> reflect_pad(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                       std::size_t pad)
{
    auto mirror = [](long i, long n) {
        if (n == 1) return 0L;
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * (n - 1) - i;
        }
        return i;
    };
    const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
    std::vector<double> out(ph * pw);
    for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x) {
            const long sy = mirror(static_cast<long>(y) - static_cast<long>(pad), static_cast<long>(h));
            const long sx = mirror(static_cast<long>(x) - static_cast<long>(pad), static_cast<long>(w));
            out[y * pw + x] = plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
        }
    return out;
}

/// Naive quadruple-loop reflection-padded cross-correlation.
inline std::vector<double> conv_oracle(const std::vector<double>& input, std::size_t n, std::size_t c_in,
                                       std::size_t h, std::size_t w, const std::vector<double>& kernel,
                                       std::size_t c_out, std::size_t k, std::size_t stride,
                                       const std::vector<double>& bias = {})
{
    const std::size_t pad = k / 2;
    const std::size_t ho = h / stride, wo = w / stride;
    const std::size_t pw = w + 2 * pad;
    std::vector<double> out(n * c_out * ho * wo, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
        std::vector<std::vector<double>> padded;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            std::vector<double> plane(input.begin() + static_cast<long>((b * c_in + ci) * h * w),
                                      input.begin() + static_cast<long>((b * c_in + ci + 1) * h * w));
            padded.push_back(reflect_pad(plane, h, w, pad));
        }
        for (std::size_t co = 0; co < c_out; ++co)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    for (std::size_t ci = 0; ci < c_in; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx)
                                acc += kernel[((co * c_in + ci) * k + ky) * k + kx] *
                                       padded[ci][(oy * stride + ky) * pw + ox * stride + kx];
                    out[((b * c_out + co) * ho + oy) * wo + ox] = acc;
                }
    }
    return out;
}

/// Explicit nearest-neighbour 2x upsample.
inline std::vector<double> upsample_oracle(const std::vector<double>& input, std::size_t planes, std::size_t h,
                                           std::size_t w)
{
    std::vector<double> out(planes * 4 * h * w);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t x = 0; x < 2 * w; ++x)
                out[(p * 2 * h + y) * 2 * w + x] = input[(p * h + y / 2) * w + x / 2];
    return out;
}

/// O(C^2 HW) gram oracle for one sample [C, HW].
inline std::vector<double> gram_oracle(const std::vector<double>& m, std::size_t c, std::size_t area)
{
    std::vector<double> g(c * c, 0.0);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t p = 0; p < area; ++p) g[i * c + j] += m[i * area + p] * m[j * area + p];
    return g;
}

}  // namespace styleremix::testing
