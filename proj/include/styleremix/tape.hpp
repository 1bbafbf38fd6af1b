#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "styleremix/tensor.hpp"

namespace styleremix {

class TapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Ordered record of differentiable operations executed while the tape is
/// active on the current thread. Entries are appended in execution order, so
/// the record is topologically sorted by construction.
template <typename T>
class Tape {
public:
    using NodePtr = std::shared_ptr<TensorNode<T>>;
    using BackwardFn = std::function<void()>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Attaches `output` to this tape. `backward` reads output's grad and
    /// accumulates into the inputs' grads.
    void record(const std::vector<NodePtr>& inputs, Tensor<T>& output, BackwardFn backward);

    /// Fills grad of every requires_grad node reachable on this tape with
    /// d(loss)/d(node). Leaves recorded on the tape but not reachable from
    /// `loss` end up with an all-zero grad. Re-running on the same tape
    /// recomputes from scratch.
    void backward(const Tensor<T>& loss);

    /// Drops every recorded node. Tensors produced before the clear can no
    /// longer be differentiated through.
    void clear();

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::uint64_t generation() const { return generation_; }

private:
    struct Entry {
        NodePtr output;
        BackwardFn backward;
    };

    std::vector<Entry> entries_;
    std::vector<NodePtr> leaves_;
    std::unordered_set<const TensorNode<T>*> leaf_set_;
    std::uint64_t generation_;
};

/// The tape ops record onto on this thread, or nullptr.
template <typename T>
Tape<T>*& active_tape();

/// RAII activation of a tape for the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>* tape) : previous_(active_tape<T>()) { active_tape<T>() = tape; }
    ~TapeScope() { active_tape<T>() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Returns the active tape when at least one input requires grad.
template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs);

/// grad += delta on `node`, allocating the grad buffer on first use.
template <typename T>
void accumulate_grad(TensorNode<T>& node, std::span<const T> delta);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace styleremix
