#pragma once

#include "styleremix/tensor.hpp"

// Differentiable primitives. Element-wise ops require equal shapes; the only
// broadcast is scalar-with-tensor through scale/add_scalar.
namespace styleremix {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value);

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// 2-D transpose.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// sum((a - b)^2), shape [1].
template <typename T>
Tensor<T> squared_distance(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace styleremix
