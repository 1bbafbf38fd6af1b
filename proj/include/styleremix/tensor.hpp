#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace styleremix {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operands do not conform; the message names the op and shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
class Tape;

/// Storage shared by every handle to the same tensor value.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a backward pass reaches this node
    bool requires_grad = false;
    // Generation of the tape that produced this node; 0 for leaves.
    std::uint64_t generation = 0;
};

/// Dense row-major tensor handle. Copies alias the same node, which is what
/// lets a parameter be recorded on a tape and later updated in place by an
/// optimizer.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<TensorNode<T>>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return node_ ? node_->data.size() : 0; }

    std::span<const T> data() const;
    /// Mutable access for leaves (parameters, inputs). Writing into a node
    /// already recorded on a live tape invalidates that tape's backward pass.
    std::span<T> mutable_data();
    std::span<const T> grad() const;
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad();
    void clear_grad();

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on);
    bool is_leaf() const { return node_ && node_->generation == 0; }

    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    /// Fresh leaf holding a copy of the data, detached from any tape.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    template <typename U>
    Tensor<U> cast() const
    {
        std::vector<U> out(numel());
        auto src = data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
        return Tensor<U>(shape(), std::move(out), requires_grad());
    }

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace styleremix
