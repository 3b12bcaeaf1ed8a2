#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "lh/dense.hpp"

namespace lh {

/// Piecewise schedule: linear warmup from lr_max/warmup to lr_max, then
/// cosine decay to lr_min at total_steps.  Endpoints are exact:
/// lr(warmup) = lr_max, lr(total) = lr_min.
inline double lr_schedule(long step, long total_steps, double lr_max, double lr_min,
                          long warmup_steps) {
    if (total_steps <= warmup_steps)
        throw std::invalid_argument("lr_schedule: total_steps must exceed warmup");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("lr_schedule: step out of [0, total]");
    if (step < warmup_steps)
        return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    constexpr double pi = 3.14159265358979323846;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(pi * progress));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-parameter first/second moment accumulators.
struct OptState {
    ParamSet m;
    ParamSet v;
    long step = 0;
    AdamConfig cfg;

    static OptState init(const ParamSet& params, AdamConfig cfg = {}) {
        OptState s;
        s.m = params.zeros_like();
        s.v = params.zeros_like();
        s.cfg = cfg;
        return s;
    }
};

/// One Adam update with bias correction.  Rejects non-finite gradients and
/// updates to frozen parameter sets.
inline void adam_step(ParamSet& params, const ParamSet& grads, OptState& state, double lr) {
    if (params.frozen)
        throw std::logic_error("adam_step: attempted gradient update on frozen parameters");
    if (grads.items.size() != params.items.size())
        throw std::logic_error("adam_step: gradient layout mismatch");

    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    for (std::size_t k = 0; k < params.items.size(); ++k) {
        auto& p = params.items[k].v;
        const auto& g = grads.items[k].v;
        auto& m = state.m.items[k].v;
        auto& v = state.v.items[k].v;
        if (g.size() != p.size()) throw std::logic_error("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw std::runtime_error("adam_step: non-finite gradient in " +
                                         params.items[k].name + "[" + std::to_string(i) + "]");
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
}

}  // namespace lh
