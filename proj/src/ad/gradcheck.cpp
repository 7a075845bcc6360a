#include "darn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "darn/error.hpp"

namespace darn {

GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor out;
        {
            Tape::Recording rec(tape);
            out = f(inputs);
        }
        if (out.numel() != 1) throw TapeError("grad_check: function must return a scalar");
        // A constant function records nothing; its gradient is zero.
        if (tape.size() > 0 && out.requires_grad()) tape.backward(out);
        for (const auto& t : inputs) {
            if (t.has_grad()) {
                analytic.emplace_back(t.grad().begin(), t.grad().end());
            } else {
                analytic.emplace_back(t.numel(), 0.0);
            }
        }
    }

    GradCheckResult result;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double up = f(inputs).item();
            data[i] = saved - eps;
            const double down = f(inputs).item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[k][i];
            double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
            result.max_rel_error = std::max(result.max_rel_error, err);
            ++result.coordinates;
        }
    }
    for (auto& t : inputs) t.zero_grad();
    return result;
}

}  // namespace darn
