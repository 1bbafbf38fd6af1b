#include "styleremix/nn.hpp"

#include <Eigen/Core>
#include <cmath>

#include "styleremix/tape.hpp"

namespace styleremix {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void require_rank(const char* op, const Shape& shape, std::size_t rank)
{
    if (shape.size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(shape));
    }
}

// Source coordinate of every (kernel tap, output position) pair along one axis.
std::vector<std::size_t> tap_map(std::size_t in, std::size_t out, std::size_t k, std::size_t stride)
{
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    std::vector<std::size_t> map(k * out);
    for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t o = 0; o < out; ++o) {
            const auto pos = static_cast<std::ptrdiff_t>(o * stride + t) - pad;
            map[t * out + o] = reflect_index(pos, in);
        }
    }
    return map;
}

struct ConvGeometry {
    std::size_t batch, c_in, c_out, h, w, kh, kw, stride, h_out, w_out;
    std::size_t patch() const { return c_in * kh * kw; }
    std::size_t positions() const { return h_out * w_out; }
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, const std::vector<std::size_t>& ymap,
            const std::vector<std::size_t>& xmap, T* cols)
{
    const auto p = g.positions();
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const T* plane = image + ci * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * p;
                const std::size_t* xs = xmap.data() + kx * g.w_out;
                for (std::size_t oy = 0; oy < g.h_out; ++oy) {
                    const T* src = plane + ymap[ky * g.h_out + oy] * g.w;
                    T* dst = row + oy * g.w_out;
                    for (std::size_t ox = 0; ox < g.w_out; ++ox) dst[ox] = src[xs[ox]];
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, const std::vector<std::size_t>& ymap,
            const std::vector<std::size_t>& xmap, T* image)
{
    const auto p = g.positions();
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        T* plane = image + ci * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * p;
                const std::size_t* xs = xmap.data() + kx * g.w_out;
                for (std::size_t oy = 0; oy < g.h_out; ++oy) {
                    T* dst = plane + ymap[ky * g.h_out + oy] * g.w;
                    const T* src = row + oy * g.w_out;
                    for (std::size_t ox = 0; ox < g.w_out; ++ox) dst[xs[ox]] += src[ox];
                }
            }
        }
    }
}

}  // namespace

Stride Stride::integer(std::size_t step)
{
    if (step == 0) throw std::invalid_argument("stride must be positive");
    return Stride(step, false);
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n)
{
    if (n == 1) return 0;
    const auto len = static_cast<std::ptrdiff_t>(n);
    const auto period = 2 * (len - 1);
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < len ? i : period - i);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvKernel<T>& kernel)
{
    require_rank("conv2d", input.shape(), 4);
    require_rank("conv2d kernel", kernel.weights.shape(), 4);
    if (kernel.stride.is_half()) {
        throw std::invalid_argument("conv2d: fractional stride requires upsample_conv2d");
    }
    ConvGeometry g{};
    g.batch = input.dim(0);
    g.c_in = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.c_out = kernel.out_channels();
    g.kh = kernel.kernel_h();
    g.kw = kernel.kernel_w();
    g.stride = kernel.stride.step();
    if (kernel.in_channels() != g.c_in) {
        throw ShapeError("conv2d: input " + to_string(input.shape()) + " has " + std::to_string(g.c_in) +
                         " channels, kernel " + to_string(kernel.weights.shape()) + " expects " +
                         std::to_string(kernel.in_channels()));
    }
    if (g.kh % 2 == 0 || g.kw % 2 == 0) {
        throw ShapeError("conv2d: kernel sizes must be odd, got " + to_string(kernel.weights.shape()));
    }
    if (g.h % g.stride != 0 || g.w % g.stride != 0) {
        throw ShapeError("conv2d: spatial dims of " + to_string(input.shape()) +
                         " not divisible by stride " + std::to_string(g.stride));
    }
    if (kernel.bias.defined() && kernel.bias.shape() != Shape{g.c_out}) {
        throw ShapeError("conv2d: bias shape " + to_string(kernel.bias.shape()) + " does not match c_out " +
                         std::to_string(g.c_out));
    }
    g.h_out = g.h / g.stride;
    g.w_out = g.w / g.stride;

    const auto ymap = tap_map(g.h, g.h_out, g.kh, g.stride);
    const auto xmap = tap_map(g.w, g.w_out, g.kw, g.stride);
    const auto patch = g.patch();
    const auto positions = g.positions();
    const bool has_bias = kernel.bias.defined();

    auto* tape = recording_tape({&input, &kernel.weights, has_bias ? &kernel.bias : nullptr});
    const bool keep_cols = tape && kernel.weights.requires_grad();

    std::vector<T> out(g.batch * g.c_out * positions);
    std::vector<T> cols(patch * positions);
    std::vector<std::vector<T>> saved;
    ConstMatrixMap<T> weights(kernel.weights.data().data(), g.c_out, patch);
    const T* in = input.data().data();
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(in + n * g.c_in * g.h * g.w, g, ymap, xmap, cols.data());
        MatrixMap<T> y(out.data() + n * g.c_out * positions, g.c_out, positions);
        y.noalias() = weights * ConstMatrixMap<T>(cols.data(), patch, positions);
        if (has_bias) {
            auto b = kernel.bias.data();
            for (std::size_t co = 0; co < g.c_out; ++co) y.row(co).array() += b[co];
        }
        if (keep_cols) saved.push_back(cols);
    }

    Tensor<T> result(Shape{g.batch, g.c_out, g.h_out, g.w_out}, std::move(out));
    if (tape) {
        std::vector<typename Tensor<T>::NodePtr> inputs{input.node(), kernel.weights.node()};
        if (has_bias) inputs.push_back(kernel.bias.node());
        auto bias_node = has_bias ? kernel.bias.node() : nullptr;
        tape->record(inputs, result,
                     [g, ymap, xmap, saved = std::move(saved), xn = input.node(), wn = kernel.weights.node(),
                      bn = bias_node, rn = result.node()] {
                         const auto patch = g.patch();
                         const auto positions = g.positions();
                         ConstMatrixMap<T> weights(wn->data.data(), g.c_out, patch);
                         std::vector<T> dweights;
                         if (wn->requires_grad) dweights.assign(g.c_out * patch, T(0));
                         std::vector<T> dinput;
                         if (xn->requires_grad) dinput.assign(xn->data.size(), T(0));
                         std::vector<T> dcols(patch * positions);
                         for (std::size_t n = 0; n < g.batch; ++n) {
                             ConstMatrixMap<T> gy(rn->grad.data() + n * g.c_out * positions, g.c_out, positions);
                             if (wn->requires_grad) {
                                 MatrixMap<T>(dweights.data(), g.c_out, patch).noalias() +=
                                     gy * ConstMatrixMap<T>(saved[n].data(), patch, positions).transpose();
                             }
                             if (xn->requires_grad) {
                                 MatrixMap<T>(dcols.data(), patch, positions).noalias() = weights.transpose() * gy;
                                 col2im(dcols.data(), g, ymap, xmap, dinput.data() + n * g.c_in * g.h * g.w);
                             }
                         }
                         if (xn->requires_grad) accumulate_grad<T>(*xn, dinput);
                         if (wn->requires_grad) accumulate_grad<T>(*wn, dweights);
                         if (bn && bn->requires_grad) {
                             std::vector<T> dbias(g.c_out, T(0));
                             for (std::size_t n = 0; n < g.batch; ++n)
                                 for (std::size_t co = 0; co < g.c_out; ++co) {
                                     const T* row = rn->grad.data() + (n * g.c_out + co) * positions;
                                     T acc = 0;
                                     for (std::size_t p = 0; p < positions; ++p) acc += row[p];
                                     dbias[co] += acc;
                                 }
                             accumulate_grad<T>(*bn, dbias);
                         }
                     });
    }
    return result;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input)
{
    require_rank("upsample_nearest2x", input.shape(), 4);
    const auto planes = input.dim(0) * input.dim(1);
    const auto h = input.dim(2);
    const auto w = input.dim(3);
    std::vector<T> out(planes * 4 * h * w);
    const T* in = input.data().data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
            const T* src = in + (p * h + y / 2) * w;
            T* dst = out.data() + (p * 2 * h + y) * 2 * w;
            for (std::size_t x = 0; x < 2 * w; ++x) dst[x] = src[x / 2];
        }
    }
    Tensor<T> result(Shape{input.dim(0), input.dim(1), 2 * h, 2 * w}, std::move(out));
    if (auto* tape = recording_tape({&input})) {
        tape->record({input.node()}, result, [xn = input.node(), rn = result.node(), planes, h, w] {
            std::vector<T> d(planes * h * w, T(0));
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t y = 0; y < 2 * h; ++y) {
                    const T* src = rn->grad.data() + (p * 2 * h + y) * 2 * w;
                    T* dst = d.data() + (p * h + y / 2) * w;
                    for (std::size_t x = 0; x < 2 * w; ++x) dst[x / 2] += src[x];
                }
            accumulate_grad<T>(*xn, d);
        });
    }
    return result;
}

template <typename T>
Tensor<T> upsample_conv2d(const Tensor<T>& input, const ConvKernel<T>& kernel)
{
    if (!kernel.stride.is_half()) {
        throw std::invalid_argument("upsample_conv2d: kernel must declare fractional stride 1/2");
    }
    ConvKernel<T> unit{kernel.weights, kernel.bias, Stride::integer(1)};
    return conv2d(upsample_nearest2x(input), unit);
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps)
{
    require_rank("instance_norm", input.shape(), 4);
    const auto batch = input.dim(0);
    const auto channels = input.dim(1);
    const auto area = input.dim(2) * input.dim(3);
    if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
        throw ShapeError("instance_norm: gamma " + to_string(gamma.shape()) + " / beta " +
                         to_string(beta.shape()) + " do not match channels of " + to_string(input.shape()));
    }
    if (!(eps > 0)) throw std::invalid_argument("instance_norm: eps must be positive");

    std::vector<T> normalized(input.numel());
    std::vector<T> inv_std(batch * channels);
    std::vector<T> out(input.numel());
    const T* x = input.data().data();
    auto gm = gamma.data();
    auto bt = beta.data();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t plane = n * channels + c;
            const T* src = x + plane * area;
            double mu = 0;
            for (std::size_t i = 0; i < area; ++i) mu += src[i];
            mu /= static_cast<double>(area);
            double var = 0;
            for (std::size_t i = 0; i < area; ++i) {
                const double d = src[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(area);
            const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            inv_std[plane] = istd;
            T* xh = normalized.data() + plane * area;
            T* dst = out.data() + plane * area;
            for (std::size_t i = 0; i < area; ++i) {
                xh[i] = static_cast<T>(src[i] - mu) * istd;
                dst[i] = gm[c] * xh[i] + bt[c];
            }
        }
    }

    Tensor<T> result(input.shape(), std::move(out));
    if (auto* tape = recording_tape({&input, &gamma, &beta})) {
        tape->record({input.node(), gamma.node(), beta.node()}, result,
                     [xn = input.node(), gn = gamma.node(), bn = beta.node(), rn = result.node(),
                      normalized = std::move(normalized), inv_std = std::move(inv_std), batch, channels, area] {
                         std::vector<T> dx(xn->requires_grad ? xn->data.size() : 0);
                         std::vector<T> dgamma(channels, T(0));
                         std::vector<T> dbeta(channels, T(0));
                         const auto count = static_cast<T>(area);
                         for (std::size_t n = 0; n < batch; ++n) {
                             for (std::size_t c = 0; c < channels; ++c) {
                                 const std::size_t plane = n * channels + c;
                                 const T* gy = rn->grad.data() + plane * area;
                                 const T* xh = normalized.data() + plane * area;
                                 T sum_g = 0, sum_gx = 0;
                                 for (std::size_t i = 0; i < area; ++i) {
                                     sum_g += gy[i];
                                     sum_gx += gy[i] * xh[i];
                                 }
                                 dgamma[c] += sum_gx;
                                 dbeta[c] += sum_g;
                                 if (!dx.empty()) {
                                     const T gamma = gn->data[c];
                                     const T k = gamma * inv_std[plane] / count;
                                     T* d = dx.data() + plane * area;
                                     for (std::size_t i = 0; i < area; ++i) {
                                         d[i] = k * (count * gy[i] - sum_g - xh[i] * sum_gx);
                                     }
                                 }
                             }
                         }
                         if (!dx.empty()) accumulate_grad<T>(*xn, dx);
                         accumulate_grad<T>(*gn, dgamma);
                         accumulate_grad<T>(*bn, dbeta);
                     });
    }
    return result;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input)
{
    std::vector<T> out(input.numel());
    auto x = input.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    Tensor<T> result(input.shape(), std::move(out));
    if (auto* tape = recording_tape({&input})) {
        tape->record({input.node()}, result, [xn = input.node(), rn = result.node()] {
            std::vector<T> d(rn->grad.size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = xn->data[i] > T(0) ? rn->grad[i] : T(0);
            accumulate_grad<T>(*xn, d);
        });
    }
    return result;
}

template <typename T>
Tensor<T> softmax_vec(const Tensor<T>& input)
{
    require_rank("softmax_vec", input.shape(), 1);
    auto x = input.data();
    T top = x[0];
    for (auto v : x) {
        if (!std::isfinite(v)) throw std::domain_error("softmax_vec: non-finite input");
        top = std::max(top, v);
    }
    std::vector<T> out(x.size());
    T total = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - top);
        total += out[i];
    }
    for (auto& v : out) v /= total;
    Tensor<T> result(input.shape(), std::move(out));
    if (auto* tape = recording_tape({&input})) {
        tape->record({input.node()}, result, [xn = input.node(), rn = result.node()] {
            const auto& y = rn->data;
            const auto& g = rn->grad;
            T dot = 0;
            for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
            std::vector<T> d(y.size());
            for (std::size_t i = 0; i < y.size(); ++i) d[i] = y[i] * (g[i] - dot);
            accumulate_grad<T>(*xn, d);
        });
    }
    return result;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& input, const Tensor<T>& weights)
{
    require_rank("scale_channels", input.shape(), 4);
    const auto batch = input.dim(0);
    const auto channels = input.dim(1);
    const auto area = input.dim(2) * input.dim(3);
    if (weights.shape() != Shape{channels}) {
        throw ShapeError("scale_channels: weights " + to_string(weights.shape()) + " vs input " +
                         to_string(input.shape()));
    }
    std::vector<T> out(input.numel());
    auto x = input.data();
    auto w = weights.data();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * area;
            for (std::size_t i = 0; i < area; ++i) out[base + i] = x[base + i] * w[c];
        }
    Tensor<T> result(input.shape(), std::move(out));
    if (auto* tape = recording_tape({&input, &weights})) {
        tape->record({input.node(), weights.node()}, result,
                     [xn = input.node(), wn = weights.node(), rn = result.node(), batch, channels, area] {
                         const auto& g = rn->grad;
                         std::vector<T> dx(xn->requires_grad ? g.size() : 0);
                         std::vector<T> dw(channels, T(0));
                         for (std::size_t n = 0; n < batch; ++n)
                             for (std::size_t c = 0; c < channels; ++c) {
                                 const std::size_t base = (n * channels + c) * area;
                                 T acc = 0;
                                 for (std::size_t i = 0; i < area; ++i) {
                                     acc += g[base + i] * xn->data[base + i];
                                     if (!dx.empty()) dx[base + i] = g[base + i] * wn->data[c];
                                 }
                                 dw[c] += acc;
                             }
                         if (!dx.empty()) accumulate_grad<T>(*xn, dx);
                         accumulate_grad<T>(*wn, dw);
                     });
    }
    return result;
}

template <typename T>
Tensor<T> scale_input_slices(const Tensor<T>& kernel, const Tensor<T>& weights)
{
    require_rank("scale_input_slices", kernel.shape(), 4);
    const auto c_out = kernel.dim(0);
    const auto c_in = kernel.dim(1);
    const auto taps = kernel.dim(2) * kernel.dim(3);
    if (weights.shape() != Shape{c_in}) {
        throw ShapeError("scale_input_slices: weights " + to_string(weights.shape()) + " vs kernel " +
                         to_string(kernel.shape()));
    }
    std::vector<T> out(kernel.numel());
    auto k = kernel.data();
    auto w = weights.data();
    for (std::size_t o = 0; o < c_out; ++o)
        for (std::size_t i = 0; i < c_in; ++i) {
            const std::size_t base = (o * c_in + i) * taps;
            for (std::size_t t = 0; t < taps; ++t) out[base + t] = k[base + t] * w[i];
        }
    Tensor<T> result(kernel.shape(), std::move(out));
    if (auto* tape = recording_tape({&kernel, &weights})) {
        tape->record({kernel.node(), weights.node()}, result,
                     [kn = kernel.node(), wn = weights.node(), rn = result.node(), c_out, c_in, taps] {
                         const auto& g = rn->grad;
                         std::vector<T> dk(kn->requires_grad ? g.size() : 0);
                         std::vector<T> dw(c_in, T(0));
                         for (std::size_t o = 0; o < c_out; ++o)
                             for (std::size_t i = 0; i < c_in; ++i) {
                                 const std::size_t base = (o * c_in + i) * taps;
                                 for (std::size_t t = 0; t < taps; ++t) {
                                     dw[i] += g[base + t] * kn->data[base + t];
                                     if (!dk.empty()) dk[base + t] = g[base + t] * wn->data[i];
                                 }
                             }
                         if (!dk.empty()) accumulate_grad<T>(*kn, dk);
                         accumulate_grad<T>(*wn, dw);
                     });
    }
    return result;
}

template <typename T>
Tensor<T> gram_matrix(const Tensor<T>& features)
{
    require_rank("gram_matrix", features.shape(), 4);
    const auto batch = features.dim(0);
    const auto channels = features.dim(1);
    const auto area = features.dim(2) * features.dim(3);
    std::vector<T> out(batch * channels * channels);
    for (std::size_t n = 0; n < batch; ++n) {
        ConstMatrixMap<T> m(features.data().data() + n * channels * area, channels, area);
        MatrixMap<T>(out.data() + n * channels * channels, channels, channels).noalias() = m * m.transpose();
    }
    Tensor<T> result(Shape{batch, channels, channels}, std::move(out));
    if (auto* tape = recording_tape({&features})) {
        tape->record({features.node()}, result, [fn = features.node(), rn = result.node(), batch, channels, area] {
            std::vector<T> d(fn->data.size());
            for (std::size_t n = 0; n < batch; ++n) {
                ConstMatrixMap<T> g(rn->grad.data() + n * channels * channels, channels, channels);
                ConstMatrixMap<T> m(fn->data.data() + n * channels * area, channels, area);
                MatrixMap<T>(d.data() + n * channels * area, channels, area).noalias() =
                    (g + g.transpose()) * m;
            }
            accumulate_grad<T>(*fn, d);
        });
    }
    return result;
}

#define STYLEREMIX_INSTANTIATE(T)                                                              \
    template Tensor<T> conv2d(const Tensor<T>&, const ConvKernel<T>&);                         \
    template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                   \
    template Tensor<T> upsample_conv2d(const Tensor<T>&, const ConvKernel<T>&);                \
    template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
    template Tensor<T> relu(const Tensor<T>&);                                                 \
    template Tensor<T> softmax_vec(const Tensor<T>&);                                          \
    template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                     \
    template Tensor<T> scale_input_slices(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> gram_matrix(const Tensor<T>&);

STYLEREMIX_INSTANTIATE(float)
STYLEREMIX_INSTANTIATE(double)

#undef STYLEREMIX_INSTANTIATE

}  // namespace styleremix
