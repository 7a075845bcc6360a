#include "darn/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "darn/error.hpp"
#include "darn/ops.hpp"

namespace darn {

namespace {

struct Layout {
    std::size_t batch, classes, plane;
};

Layout check_pair(const Tensor& logits, const LabelMask& target, const char* op) {
    if (!logits.defined() || logits.rank() != 4) throw DimensionError(std::string(op) + ": logits must be [B,K,H,W]");
    if (target.batch != logits.dim(0) || target.height != logits.dim(2) || target.width != logits.dim(3) ||
        target.data.size() != target.batch * target.height * target.width) {
        throw DimensionError(std::string(op) + ": target mask does not match logits " + shape_str(logits.shape()));
    }
    const std::size_t k = logits.dim(1);
    for (auto y : target.data) {
        if (y >= k) throw DomainError(std::string(op) + ": label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    }
    return {logits.dim(0), k, logits.dim(2) * logits.dim(3)};
}

// Softmax over the class axis for every pixel, same layout as the logits.
std::vector<double> softmax_classes(const Tensor& logits, const Layout& L) {
    std::vector<double> p(logits.numel());
    const auto z = logits.data();
    for (std::size_t b = 0; b < L.batch; ++b) {
        const std::size_t base = b * L.classes * L.plane;
        for (std::size_t i = 0; i < L.plane; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < L.classes; ++k) mx = std::max(mx, z[base + k * L.plane + i]);
            double sum = 0.0;
            for (std::size_t k = 0; k < L.classes; ++k) {
                const double e = std::exp(z[base + k * L.plane + i] - mx);
                p[base + k * L.plane + i] = e;
                sum += e;
            }
            for (std::size_t k = 0; k < L.classes; ++k) p[base + k * L.plane + i] /= sum;
        }
    }
    return p;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const LabelMask& target) {
    const Layout L = check_pair(logits, target, "cross_entropy");
    const auto z = logits.data();
    const double n = static_cast<double>(L.batch * L.plane);
    double total = 0.0;
    for (std::size_t b = 0; b < L.batch; ++b) {
        const std::size_t base = b * L.classes * L.plane;
        for (std::size_t i = 0; i < L.plane; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < L.classes; ++k) mx = std::max(mx, z[base + k * L.plane + i]);
            double sum = 0.0;
            for (std::size_t k = 0; k < L.classes; ++k) sum += std::exp(z[base + k * L.plane + i] - mx);
            const std::size_t t = target.data[b * L.plane + i];
            total += (mx + std::log(sum)) - z[base + t * L.plane + i];
        }
    }
    Tensor out = Tensor::scalar(total / n);
    if (should_record({&logits})) {
        Tape::active()->record("cross_entropy", out, [logits, out, target, L, n]() mutable {
            const double g = out.grad()[0] / n;
            auto p = softmax_classes(logits, L);
            auto gz = logits.mutable_grad();
            for (std::size_t b = 0; b < L.batch; ++b) {
                const std::size_t base = b * L.classes * L.plane;
                for (std::size_t i = 0; i < L.plane; ++i) {
                    const std::size_t t = target.data[b * L.plane + i];
                    for (std::size_t k = 0; k < L.classes; ++k) {
                        const std::size_t idx = base + k * L.plane + i;
                        gz[idx] += g * (p[idx] - (k == t ? 1.0 : 0.0));
                    }
                }
            }
        });
    }
    return out;
}

Tensor dice_loss(const Tensor& logits, const LabelMask& target, double smooth) {
    const Layout L = check_pair(logits, target, "dice_loss");
    auto p = softmax_classes(logits, L);
    std::vector<double> inter(L.classes, 0.0), psum(L.classes, 0.0), ysum(L.classes, 0.0);
    for (std::size_t b = 0; b < L.batch; ++b) {
        const std::size_t base = b * L.classes * L.plane;
        for (std::size_t k = 0; k < L.classes; ++k) {
            for (std::size_t i = 0; i < L.plane; ++i) {
                const double pk = p[base + k * L.plane + i];
                const bool yk = target.data[b * L.plane + i] == k;
                psum[k] += pk;
                if (yk) {
                    inter[k] += pk;
                    ysum[k] += 1.0;
                }
            }
        }
    }
    double loss = 0.0;
    for (std::size_t k = 0; k < L.classes; ++k) {
        loss += 1.0 - (2.0 * inter[k] + smooth) / (psum[k] + ysum[k] + smooth);
    }
    loss /= static_cast<double>(L.classes);
    Tensor out = Tensor::scalar(loss);
    if (should_record({&logits})) {
        Tape::active()->record("dice_loss", out,
                               [logits, out, target, L, p = std::move(p), inter, psum, ysum, smooth]() mutable {
            const double g = out.grad()[0] / static_cast<double>(L.classes);
            // dL/dp_k at a pixel = -(2 y D_k - N_k) / D_k^2, scaled by g.
            std::vector<double> num(L.classes), den(L.classes);
            for (std::size_t k = 0; k < L.classes; ++k) {
                num[k] = 2.0 * inter[k] + smooth;
                den[k] = psum[k] + ysum[k] + smooth;
            }
            auto gz = logits.mutable_grad();
            std::vector<double> gp(L.classes);
            for (std::size_t b = 0; b < L.batch; ++b) {
                const std::size_t base = b * L.classes * L.plane;
                for (std::size_t i = 0; i < L.plane; ++i) {
                    const std::size_t t = target.data[b * L.plane + i];
                    double dot = 0.0;
                    for (std::size_t k = 0; k < L.classes; ++k) {
                        const double y = (k == t) ? 1.0 : 0.0;
                        gp[k] = -g * (2.0 * y * den[k] - num[k]) / (den[k] * den[k]);
                        dot += p[base + k * L.plane + i] * gp[k];
                    }
                    for (std::size_t k = 0; k < L.classes; ++k) {
                        const std::size_t idx = base + k * L.plane + i;
                        gz[idx] += p[idx] * (gp[k] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor complexity_loss(const Tensor& c, double variance_sign) {
    if (!c.defined() || c.numel() == 0) throw DimensionError("complexity_loss: empty batch");
    if (c.rank() != 1) throw DimensionError("complexity_loss: expected [B], got " + shape_str(c.shape()));
    for (double v : c.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("complexity_loss: c outside [0,1]");
    }
    Tensor var = ops::reduce_all(c, ops::Reduce::Var);
    Tensor centred = ops::add_const(ops::reduce_all(c, ops::Reduce::Mean), -0.5);
    return ops::add(ops::mul_const(var, variance_sign), ops::mul(centred, centred));
}

LossBreakdown total_loss(const Tensor& logits, const LabelMask& target, const Tensor& c, const LossWeights& w) {
    LossBreakdown out;
    out.beta = w.beta;
    out.lambda_dice = w.lambda_dice;
    Tensor ce = cross_entropy(logits, target);
    Tensor dice = dice_loss(logits, target);
    out.ce = ce.item();
    out.dice = dice.item();
    Tensor total = ops::add(ce, ops::mul_const(dice, w.lambda_dice));
    if (c.defined()) {
        Tensor comp = complexity_loss(c, w.variance_sign);
        out.complexity = comp.item();
        total = ops::add(total, ops::mul_const(comp, w.beta));
    }
    out.total = total;
    return out;
}

LabelMask argmax(const Tensor& logits) {
    if (!logits.defined() || logits.rank() != 4) throw DimensionError("argmax: logits must be [B,K,H,W]");
    LabelMask m;
    m.batch = logits.dim(0);
    m.height = logits.dim(2);
    m.width = logits.dim(3);
    const std::size_t k = logits.dim(1), plane = m.height * m.width;
    m.data.resize(m.batch * plane);
    const auto z = logits.data();
    for (std::size_t b = 0; b < m.batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
            std::size_t best = 0;
            double bv = z[b * k * plane + i];
            for (std::size_t c = 1; c < k; ++c) {
                const double v = z[(b * k + c) * plane + i];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            m.data[b * plane + i] = static_cast<std::uint8_t>(best);
        }
    return m;
}

}  // namespace darn
