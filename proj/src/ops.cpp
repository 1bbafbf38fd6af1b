#include "styleremix/ops.hpp"

#include <Eigen/Core>

#include "styleremix/tape.hpp"

namespace styleremix {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b)
{
    if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined operand");
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& a)
{
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + to_string(a.shape()));
    }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape("add", a, b);
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    Tensor<T> result(a.shape(), std::move(out));
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record({a.node(), b.node()}, result, [an = a.node(), bn = b.node(), rn = result.node()] {
            accumulate_grad<T>(*an, rn->grad);
            accumulate_grad<T>(*bn, rn->grad);
        });
    }
    return result;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape("sub", a, b);
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    Tensor<T> result(a.shape(), std::move(out));
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record({a.node(), b.node()}, result, [an = a.node(), bn = b.node(), rn = result.node()] {
            accumulate_grad<T>(*an, rn->grad);
            if (bn->requires_grad) {
                std::vector<T> neg(rn->grad.size());
                for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -rn->grad[i];
                accumulate_grad<T>(*bn, neg);
            }
        });
    }
    return result;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape("mul", a, b);
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    Tensor<T> result(a.shape(), std::move(out));
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record({a.node(), b.node()}, result, [an = a.node(), bn = b.node(), rn = result.node()] {
            const auto& g = rn->grad;
            std::vector<T> d(g.size());
            if (an->requires_grad) {
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * bn->data[i];
                accumulate_grad<T>(*an, d);
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * an->data[i];
                accumulate_grad<T>(*bn, d);
            }
        });
    }
    return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor)
{
    if (!a.defined()) throw ShapeError("scale: undefined operand");
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    Tensor<T> result(a.shape(), std::move(out));
    if (auto* tape = recording_tape({&a})) {
        tape->record({a.node()}, result, [an = a.node(), rn = result.node(), factor] {
            std::vector<T> d(rn->grad.size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = rn->grad[i] * factor;
            accumulate_grad<T>(*an, d);
        });
    }
    return result;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value)
{
    if (!a.defined()) throw ShapeError("add_scalar: undefined operand");
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
    Tensor<T> result(a.shape(), std::move(out));
    if (auto* tape = recording_tape({&a})) {
        tape->record({a.node()}, result, [an = a.node(), rn = result.node()] {
            accumulate_grad<T>(*an, rn->grad);
        });
    }
    return result;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const auto m = a.dim(0);
    const auto k = a.dim(1);
    const auto n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    std::vector<T> out(m * n);
    using Map = Eigen::Map<const RowMatrix<T>>;
    Eigen::Map<RowMatrix<T>>(out.data(), m, n).noalias() =
        Map(a.data().data(), m, k) * Map(b.data().data(), k, n);
    Tensor<T> result(Shape{m, n}, std::move(out));
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record({a.node(), b.node()}, result, [an = a.node(), bn = b.node(), rn = result.node(), m, k, n] {
            using Map = Eigen::Map<const RowMatrix<T>>;
            Map g(rn->grad.data(), m, n);
            if (an->requires_grad) {
                std::vector<T> da(m * k);
                Eigen::Map<RowMatrix<T>>(da.data(), m, k).noalias() =
                    g * Map(bn->data.data(), k, n).transpose();
                accumulate_grad<T>(*an, da);
            }
            if (bn->requires_grad) {
                std::vector<T> db(k * n);
                Eigen::Map<RowMatrix<T>>(db.data(), k, n).noalias() =
                    Map(an->data.data(), m, k).transpose() * g;
                accumulate_grad<T>(*bn, db);
            }
        });
    }
    return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a)
{
    require_matrix("transpose", a);
    const auto rows = a.dim(0);
    const auto cols = a.dim(1);
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
    Tensor<T> result(Shape{cols, rows}, std::move(out));
    if (auto* tape = recording_tape({&a})) {
        tape->record({a.node()}, result, [an = a.node(), rn = result.node(), rows, cols] {
            std::vector<T> d(rows * cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] = rn->grad[c * rows + r];
            accumulate_grad<T>(*an, d);
        });
    }
    return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape)
{
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    Tensor<T> result(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
    if (auto* tape = recording_tape({&a})) {
        tape->record({a.node()}, result, [an = a.node(), rn = result.node()] {
            accumulate_grad<T>(*an, rn->grad);
        });
    }
    return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a)
{
    if (!a.defined()) throw ShapeError("sum: undefined operand");
    T total = 0;
    for (auto v : a.data()) total += v;
    Tensor<T> result = Tensor<T>::scalar(total);
    if (auto* tape = recording_tape({&a})) {
        tape->record({a.node()}, result, [an = a.node(), rn = result.node()] {
            std::vector<T> d(an->data.size(), rn->grad[0]);
            accumulate_grad<T>(*an, d);
        });
    }
    return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a)
{
    if (!a.defined()) throw ShapeError("mean: undefined operand");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> squared_distance(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape("squared_distance", a, b);
    auto x = a.data();
    auto y = b.data();
    T total = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T d = x[i] - y[i];
        total += d * d;
    }
    Tensor<T> result = Tensor<T>::scalar(total);
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record({a.node(), b.node()}, result, [an = a.node(), bn = b.node(), rn = result.node()] {
            const T g = rn->grad[0];
            std::vector<T> d(an->data.size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = T(2) * g * (an->data[i] - bn->data[i]);
            accumulate_grad<T>(*an, d);
            if (bn->requires_grad) {
                for (auto& v : d) v = -v;
                accumulate_grad<T>(*bn, d);
            }
        });
    }
    return result;
}

#define STYLEREMIX_INSTANTIATE(T)                                           \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> scale(const Tensor<T>&, T);                          \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                     \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> transpose(const Tensor<T>&);                         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                    \
    template Tensor<T> sum(const Tensor<T>&);                               \
    template Tensor<T> mean(const Tensor<T>&);                              \
    template Tensor<T> squared_distance(const Tensor<T>&, const Tensor<T>&);

STYLEREMIX_INSTANTIATE(float)
STYLEREMIX_INSTANTIATE(double)

#undef STYLEREMIX_INSTANTIATE

}  // namespace styleremix
