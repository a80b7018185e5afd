#pragma once

// Central-difference gradient oracle. The probe function is evaluated in
// 64-bit shadow mode so the difference quotient is not drowned by float32
// rounding; the analytic gradient under test comes from the normal float32
// pipeline. Inputs at relu kinks are the caller's responsibility to avoid.

#include <functional>

#include "mslc/tensor.hpp"

namespace mslc {

// f must be deterministic and scalar-valued. Returns the max over elements of
// |analytic - central_difference| / (|central_difference| + 1e-8).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double step);

// Same check against an externally supplied analytic gradient.
double finite_diff_against(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, const std::vector<double>& analytic,
                           double step);

}  // namespace mslc
