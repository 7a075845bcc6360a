#pragma once

#include <functional>
#include <span>
#include <vector>

#include "darn/tensor.hpp"

namespace darn {

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;  // number of perturbed scalars
};

// Compares reverse-mode gradients of `f` with central differences.
//
// Every input is treated as a variable (requires_grad is forced on for the
// analytic pass). The error for a coordinate is
//   |analytic - numeric| / max(1, |analytic|)
// and the maximum over all coordinates is returned. `f` must be a
// deterministic function of its inputs: stochastic masks have to be fixed
// (e.g. re-seeded identically on every call).
GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps = 1e-5);

}  // namespace darn
