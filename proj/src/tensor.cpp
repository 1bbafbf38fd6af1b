#include "styleremix/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace styleremix {

std::string to_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>())
{
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor: zero-sized dimension in shape " + to_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad)
{
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const
{
    static const Shape empty;
    return node_ ? node_->shape : empty;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const
{
    if (axis >= rank()) {
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
    }
    return shape()[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const
{
    if (!node_) return {};
    return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data()
{
    if (!node_) return {};
    return node_->data;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const
{
    if (!node_) return {};
    return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad()
{
    if (node_) node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad()
{
    if (node_) {
        node_->grad.clear();
        node_->grad.shrink_to_fit();
    }
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on)
{
    if (!node_) throw std::logic_error("tensor: set_requires_grad on undefined tensor");
    if (node_->generation != 0) {
        throw std::logic_error("tensor: requires_grad can only be changed on leaves");
    }
    node_->requires_grad = on;
}

template <typename T>
T Tensor<T>::item() const
{
    if (numel() != 1) {
        throw ShapeError("item: expected a single element, shape is " + to_string(shape()));
    }
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const
{
    const auto& s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("at: index rank does not match shape " + to_string(s));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) throw ShapeError("at: index out of range for shape " + to_string(s));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const
{
    return clone(false);
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const
{
    if (!node_) return {};
    return Tensor(node_->shape, node_->data, requires_grad);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace styleremix
