#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "darn/encoder.hpp"

namespace darn {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    bool decay_biases = true;  // false exempts tensors whose name ends in ".b"
};

struct AdamWMoments {
    std::vector<double> m;
    std::vector<double> v;
};

// Decoupled-weight-decay Adam:
//   m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
// Tensors that do not require grad (frozen) are left untouched; a missing
// gradient on a trainable tensor counts as zero.
class AdamW {
   public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // Throws TrainingError naming the first parameter with a non-finite gradient.
    void step(std::vector<NamedTensor>& params, double lr);

    const AdamWConfig& config() const { return cfg_; }
    std::size_t steps() const { return t_; }
    const std::map<std::string, AdamWMoments>& moments() const { return moments_; }

    void restore(std::size_t steps, std::map<std::string, AdamWMoments> moments) {
        t_ = steps;
        moments_ = std::move(moments);
    }

   private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, AdamWMoments> moments_;
};

// Linear warmup then cosine decay.
//   t <  W: base * (t+1) / W
//   t >= W: min + (base-min)/2 * (1 + cos(pi (t-W)/(T-W)))
struct CosineSchedule {
    double base_lr = 1e-4;
    double min_lr = 0.0;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;

    // Throws ConfigError when T <= W and DomainError when t > T.
    double lr_at(std::size_t t) const;
};

// sqrt of the summed squared gradients of every trainable tensor.
double global_grad_norm(const std::vector<NamedTensor>& params);

}  // namespace darn
