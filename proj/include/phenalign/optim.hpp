#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "phenalign/error.hpp"
#include "phenalign/graph.hpp"
#include "phenalign/params.hpp"
#include "phenalign/tensor.hpp"

namespace phenalign {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// AdamW: bias-corrected moments plus decoupled weight decay, which scales
// parameters by (1 - lr * wd) independently of the gradient step.
class AdamW {
public:
    AdamW(const ParameterStore& params, AdamConfig cfg = {}) : cfg_(cfg) {
        for (const auto& [name, t] : params) {
            m_.add(name, Tensor(t.shape()));
            v_.add(name, Tensor(t.shape()));
        }
    }

    void step(ParameterStore& params, const GradientMap& grads, double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto& [name, p] : params) {
            auto it = grads.find(name);
            if (it == grads.end())
                throw ContractError("adamw: missing gradient for " + name);
            const Tensor& g = it->second;
            if (!g.same_shape(p))
                throw DimensionError("adamw: gradient shape mismatch for " + name);
            Tensor& m = m_.get(name);
            Tensor& v = v_.get(name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                p[i] -= lr * cfg_.weight_decay * p[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    std::size_t step_count() const { return step_; }
    const ParameterStore& moments_m() const { return m_; }
    const ParameterStore& moments_v() const { return v_; }

    void restore(ParameterStore m, ParameterStore v, std::size_t step) {
        if (!m.same_layout(m_) || !v.same_layout(v_))
            throw ContractError("adamw: restored moments do not match layout");
        m_ = std::move(m);
        v_ = std::move(v);
        step_ = step;
    }

private:
    AdamConfig cfg_;
    ParameterStore m_, v_;
    std::size_t step_ = 0;
};

// Linear warmup to the base rate over the first ceil(ratio * total) steps,
// then cosine decay to zero at total_steps. Steps are 1-based.
inline double lr_schedule(std::size_t step, std::size_t total_steps, double base_lr,
                          double warmup_ratio) {
    if (total_steps == 0 || step > total_steps)
        throw ContractError("lr schedule: step " + std::to_string(step) +
                            " outside 0.." + std::to_string(total_steps));
    if (step == 0) return 0.0;
    const std::size_t warmup = static_cast<std::size_t>(
        std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    if (step <= warmup)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(total_steps - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
inline double clip_gradients(GradientMap& grads, double max_norm) {
    if (max_norm <= 0.0) throw ContractError("clip: max_norm must be positive");
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& [name, g] : grads)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale;
    }
    return norm;
}

}  // namespace phenalign
