#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "styleremix/tensor.hpp"

namespace styleremix {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment accumulators for one parameter tensor. Both are all-zero exactly
/// when step_count == 0.
template <typename T>
struct AdamState {
    std::vector<T> first_moment;
    std::vector<T> second_moment;
    std::uint64_t step_count = 0;
    AdamHyper hyper;
};

/// One bias-corrected Adam update of `params` in place.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr);

/// Adam over a set of parameter tensors. Parameters without a gradient
/// buffer on this step (not reached by the loss) are skipped entirely, so
/// their values and moments stay frozen.
template <typename T>
class Adam {
public:
    explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

    void add_parameter(Tensor<T> param);
    std::size_t size() const { return params_.size(); }

    void zero_grad();
    void step(double lr);

    const AdamState<T>& state(std::size_t i) const { return states_.at(i); }

private:
    AdamHyper hyper_;
    std::vector<Tensor<T>> params_;
    std::vector<AdamState<T>> states_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace styleremix
