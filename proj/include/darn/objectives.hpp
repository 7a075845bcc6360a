#pragma once

#include <cstdint>
#include <vector>

#include "darn/tensor.hpp"

namespace darn {

// Integer class mask [B,H,W], row-major.
struct LabelMask {
    std::size_t batch = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    std::size_t size() const { return data.size(); }
};

// Mean over pixels of -log softmax(logits)[target]; max-shifted.
Tensor cross_entropy(const Tensor& logits, const LabelMask& target);

// Soft Dice over softmax probabilities, one term per class summed over the
// whole batch, averaged over classes:
//   d_k = 1 - (2 sum p_k y_k + s) / (sum p_k + sum y_k + s)
Tensor dice_loss(const Tensor& logits, const LabelMask& target, double smooth = 1.0);

// variance_sign * Var(c) + (mean(c) - 0.5)^2, population variance.
// +1 is the penalty as written; -1 rewards spread in c.
Tensor complexity_loss(const Tensor& c, double variance_sign = 1.0);

struct LossWeights {
    double beta = 0.05;
    double lambda_dice = 1.0;
    double variance_sign = 1.0;
};

struct LossBreakdown {
    Tensor total;  // differentiable scalar
    double ce = 0.0;
    double dice = 0.0;
    double complexity = 0.0;
    double beta = 0.05;
    double lambda_dice = 1.0;
};

// total = ce + lambda_dice * dice + beta * complexity. `c` may be undefined
// (no complexity head), in which case the complexity term is zero.
LossBreakdown total_loss(const Tensor& logits, const LabelMask& target, const Tensor& c, const LossWeights& w = {});

// Per-pixel argmax over the class axis.
LabelMask argmax(const Tensor& logits);

}  // namespace darn
