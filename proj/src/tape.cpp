#include "styleremix/tape.hpp"

#include <atomic>

namespace styleremix {

namespace {

std::uint64_t next_generation()
{
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

template <typename T>
Tape<T>::Tape() : generation_(next_generation())
{
}

template <typename T>
void Tape<T>::record(const std::vector<NodePtr>& inputs, Tensor<T>& output, BackwardFn backward)
{
    for (const auto& in : inputs) {
        if (!in->requires_grad) continue;
        if (in->generation == 0) {
            if (leaf_set_.insert(in.get()).second) leaves_.push_back(in);
        } else if (in->generation != generation_) {
            throw TapeError("tape: input was produced on a cleared or different tape");
        }
    }
    auto& node = *output.node();
    node.requires_grad = true;
    node.generation = generation_;
    entries_.push_back(Entry{output.node(), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss)
{
    if (!loss.defined()) throw TapeError("backward: undefined loss");
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    }
    if (loss.node()->generation != generation_) {
        throw TapeError("backward: loss is not recorded on this tape (tape cleared?)");
    }
    for (auto& e : entries_) e.output->grad.clear();
    for (auto& leaf : leaves_) leaf->grad.assign(leaf->data.size(), T(0));

    loss.node()->grad.assign(1, T(1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->backward();
    }
}

template <typename T>
void Tape<T>::clear()
{
    entries_.clear();
    entries_.shrink_to_fit();
    leaves_.clear();
    leaf_set_.clear();
    generation_ = next_generation();
}

template <typename T>
Tape<T>*& active_tape()
{
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs)
{
    auto* tape = active_tape<T>();
    if (!tape) return nullptr;
    for (const auto* t : inputs) {
        if (t && t->requires_grad()) return tape;
    }
    return nullptr;
}

template <typename T>
void accumulate_grad(TensorNode<T>& node, std::span<const T> delta)
{
    if (!node.requires_grad) return;
    if (node.grad.empty()) {
        node.grad.assign(delta.begin(), delta.end());
        return;
    }
    for (std::size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

template class Tape<float>;
template class Tape<double>;
template Tape<float>*& active_tape<float>();
template Tape<double>*& active_tape<double>();
template Tape<float>* recording_tape<float>(std::initializer_list<const Tensor<float>*>);
template Tape<double>* recording_tape<double>(std::initializer_list<const Tensor<double>*>);
template void accumulate_grad<float>(TensorNode<float>&, std::span<const float>);
template void accumulate_grad<double>(TensorNode<double>&, std::span<const double>);

}  // namespace styleremix
