#include <algorithm>
#include <cmath>

#include "darn/error.hpp"
#include "darn/synth.hpp"

namespace darn {

Tensor fgsm(const ImageLoss& loss, const Tensor& images, const LabelMask& labels, double epsilon) {
    if (!(epsilon >= 0.0)) throw DomainError("fgsm: epsilon must be non-negative");
    Tensor x = images.clone();
    x.set_requires_grad(true);
    Tape tape;
    Tensor l;
    {
        Tape::Recording rec(tape);
        l = loss(x, labels);
    }
    std::vector<double> grad(x.numel(), 0.0);
    if (l.requires_grad()) {
        tape.backward(l);
        if (x.has_grad()) grad.assign(x.grad().begin(), x.grad().end());
    }
    std::vector<double> out(x.numel());
    const auto src = images.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) throw TrainingError("fgsm: non-finite input gradient");
        const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        double v = std::clamp(src[i] + epsilon * s, 0.0, 1.0);
        // Rounding in x + eps can overshoot the ball by an ulp.
        while (std::abs(v - src[i]) > epsilon) v = std::nextafter(v, src[i]);
        out[i] = v;
    }
    return Tensor::from(images.shape(), std::move(out));
}

}  // namespace darn
