#include "styleremix/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "styleremix/tape.hpp"

namespace styleremix {

namespace {

double evaluate(const std::function<Tensor<double>(const Tensor<double>&)>& fn, const Tensor<double>& x)
{
    TapeScope<double> no_recording(nullptr);
    const double value = fn(x).item();
    if (!std::isfinite(value)) throw std::domain_error("grad_check: non-finite function value");
    return value;
}

}  // namespace

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                  const Tensor<double>& x, double step)
{
    if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");

    Tensor<double> point = x.clone(true);
    std::vector<double> analytic;
    {
        Tape<double> tape;
        TapeScope<double> scope(&tape);
        Tensor<double> loss = fn(point);
        if (!loss.requires_grad()) {
            // fn does not depend on x at all
            analytic.assign(point.numel(), 0.0);
        } else {
            tape.backward(loss);
            analytic.assign(point.grad().begin(), point.grad().end());
        }
    }

    double worst = 0.0;
    Tensor<double> probe = x.clone(false);
    auto values = probe.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double original = values[i];
        values[i] = original + step;
        const double up = evaluate(fn, probe);
        values[i] = original - step;
        const double down = evaluate(fn, probe);
        values[i] = original;

        const double numeric = (up - down) / (2.0 * step);
        if (!std::isfinite(analytic[i]) || !std::isfinite(numeric)) {
            throw std::domain_error("grad_check: non-finite gradient at entry " + std::to_string(i));
        }
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace styleremix
