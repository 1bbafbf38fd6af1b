#include "styleremix/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace styleremix {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr)
{
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    }
    if (!(lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
    if (state.step_count == 0) {
        state.first_moment.assign(params.size(), T(0));
        state.second_moment.assign(params.size(), T(0));
    } else if (state.first_moment.size() != params.size()) {
        throw ShapeError("adam_step: state size does not match parameter size");
    }

    const auto& h = state.hyper;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(h.beta1, t);
    const double correction2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        const double m = h.beta1 * state.first_moment[i] + (1.0 - h.beta1) * g;
        const double v = h.beta2 * state.second_moment[i] + (1.0 - h.beta2) * g * g;
        state.first_moment[i] = static_cast<T>(m);
        state.second_moment[i] = static_cast<T>(v);
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        params[i] = static_cast<T>(params[i] - lr * m_hat / (std::sqrt(v_hat) + h.epsilon));
    }
}

template <typename T>
void Adam<T>::add_parameter(Tensor<T> param)
{
    if (!param.defined()) throw std::invalid_argument("Adam: undefined parameter");
    params_.push_back(std::move(param));
    AdamState<T> state;
    state.hyper = hyper_;
    states_.push_back(std::move(state));
}

template <typename T>
void Adam<T>::zero_grad()
{
    for (auto& p : params_) p.clear_grad();
}

template <typename T>
void Adam<T>::step(double lr)
{
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        adam_step<T>(p.mutable_data(), p.grad(), states_[i], lr);
    }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, double);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace styleremix
