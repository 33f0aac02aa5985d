#pragma once

#include "sdst/tensor.hpp"

#include <unordered_map>

namespace sdst {

/// Linear warmup to the peak rate, constant afterwards. `step` counts
/// optimizer updates starting at 1.
inline double warmup_lr(double peak, long step, long warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return peak;
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Adam with decoupled weight decay. Only parameters flagged trainable are
/// touched; decay skips single-row tensors (biases and norm gains).
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    /// Applies one update with learning rate `lr`, then zeroes the gradients.
    /// Returns the pre-clipping global gradient norm.
    double step(const ParameterList& params, double lr) {
        ++t_;
        double sq = 0.0;
        for (const auto& p : params)
            if (p->trainable) sq += static_cast<double>(p->grad.squaredNorm());
        double norm = std::sqrt(sq);
        float clip = 1.0f;
        if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) clip = static_cast<float>(cfg_.clip_norm / norm);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
        const float step_size = static_cast<float>(lr / bc1);
        const float denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
        for (const auto& p : params) {
            if (!p->trainable) continue;
            auto& st = state_[p.get()];
            if (st.m.size() == 0) {
                st.m = Matrix::Zero(p->value.rows(), p->value.cols());
                st.v = Matrix::Zero(p->value.rows(), p->value.cols());
            }
            auto g = (p->grad.array() * clip);
            st.m.array() = b1 * st.m.array() + (1.0f - b1) * g;
            st.v.array() = b2 * st.v.array() + (1.0f - b2) * g.square();
            if (cfg_.weight_decay > 0.0 && p->value.rows() > 1)
                p->value.array() *= static_cast<float>(1.0 - lr * cfg_.weight_decay);
            p->value.array() -=
                step_size * st.m.array() / (st.v.array().sqrt() * denom_scale + static_cast<float>(cfg_.eps));
            p->zero_grad();
        }
        return norm;
    }

    long steps_taken() const { return t_; }

private:
    struct Moments {
        Matrix m, v;
    };
    AdamWConfig cfg_;
    long t_ = 0;
    std::unordered_map<const Parameter*, Moments> state_;
};

inline void zero_grad(const ParameterList& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace sdst
