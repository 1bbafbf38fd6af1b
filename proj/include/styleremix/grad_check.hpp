#pragma once

#include <functional>

#include "styleremix/tensor.hpp"

namespace styleremix {

/// Compares the tape gradient of `fn` at `x` with central finite differences
/// of the given step. Returns max over entries of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Throws std::domain_error if a non-finite value shows up.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                  const Tensor<double>& x, double step = 1e-5);

}  // namespace styleremix
