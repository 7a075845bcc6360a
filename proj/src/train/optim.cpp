#include "darn/optim.hpp"

#include <cmath>
#include <numbers>

#include "darn/error.hpp"

namespace darn {

void AdamW::step(std::vector<NamedTensor>& params, double lr) {
    if (!(lr >= 0.0)) throw DomainError("adamw: learning rate must be non-negative");
    for (const auto& p : params) {
        if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw TrainingError("adamw: non-finite gradient in parameter " + p.name);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : params) {
        Tensor& theta = p.tensor;
        if (!theta.requires_grad()) continue;
        auto& mom = moments_[p.name];
        if (mom.m.size() != theta.numel()) {
            mom.m.assign(theta.numel(), 0.0);
            mom.v.assign(theta.numel(), 0.0);
        }
        const bool decay = cfg_.decay_biases || !p.name.ends_with(".b");
        const double wd = decay ? cfg_.weight_decay : 0.0;
        auto x = theta.mutable_data();
        const auto g = theta.grad();
        const bool has_g = !g.empty();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double gi = has_g ? g[i] : 0.0;
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            x[i] = x[i] - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps) - lr * wd * x[i];
        }
    }
}

double CosineSchedule::lr_at(std::size_t t) const {
    if (total_steps <= warmup_steps) {
        throw ConfigError("schedule: total steps (" + std::to_string(total_steps) + ") must exceed warmup steps (" +
                          std::to_string(warmup_steps) + ")");
    }
    if (t > total_steps) throw DomainError("schedule: step beyond the end of the schedule");
    if (t < warmup_steps) {
        return base_lr * static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
    }
    const double phase = static_cast<double>(t - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * phase));
}

double global_grad_norm(const std::vector<NamedTensor>& params) {
    double sum = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sum += g * g;
    }
    return std::sqrt(sum);
}

}  // namespace darn
