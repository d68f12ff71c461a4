#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "glass/autodiff.hpp"

namespace glass {

struct OptimConfig {
    double base_lr = 3e-4;
    std::size_t warmup_steps = 3000;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t total_steps = 30000;

    void validate() const
    {
        if (total_steps == 0) throw ConfigError("total_steps must be positive");
        if (warmup_steps > total_steps) throw ConfigError("warmup_steps exceeds total_steps");
        if (!(base_lr >= 0) || !(weight_decay >= 0) || !(eps > 0)) throw ConfigError("bad optimizer constants");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
    }
};

// Linear warmup from 0, then cosine decay to exactly 0 at total_steps.
inline double lr_at(std::size_t step, const OptimConfig& cfg)
{
    if (step > cfg.total_steps) throw ConfigError("step beyond total_steps");
    if (step < cfg.warmup_steps)
        return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    if (cfg.total_steps == cfg.warmup_steps) return cfg.base_lr;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Adam with weight decay applied to the weights directly rather than
// folded into the gradient.
template <typename T>
class AdamW {
public:
    explicit AdamW(OptimConfig cfg) : cfg_(cfg) { }

    // `trainable`, when given, selects which parameters move.
    void step(ParameterSet<T>& params, double lr, const std::vector<bool>* trainable = nullptr)
    {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value.dims());
                v_.emplace_back(p.value.dims());
            }
        }
        for (std::size_t i = 0; i < params.size(); ++i)
            for (auto g : params[i].grad.data())
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericError("non-finite gradient in parameter " + params[i].name);
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (trainable && !(*trainable)[i]) continue;
            auto& p = params[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < p.value.size(); ++k) {
                const double g = static_cast<double>(p.grad[k]);
                const double mk = cfg_.beta1 * static_cast<double>(m[k]) + (1.0 - cfg_.beta1) * g;
                const double vk = cfg_.beta2 * static_cast<double>(v[k]) + (1.0 - cfg_.beta2) * g * g;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                double w = static_cast<double>(p.value[k]);
                w -= lr * cfg_.weight_decay * w;
                w -= lr * (mk / c1) / (std::sqrt(vk / c2) + cfg_.eps);
                p.value[k] = static_cast<T>(w);
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    OptimConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::size_t t_ = 0;
};

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm, const std::vector<bool>* trainable = nullptr)
{
    double sq = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (trainable && !(*trainable)[i]) continue;
        for (auto g : params[i].grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto& p : params)
            for (auto& g : p.grad.data()) g *= s;
    }
    return norm;
}

} // namespace glass
