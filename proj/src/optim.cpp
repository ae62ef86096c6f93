// SPDX-License-Identifier: Apache-2.0
#include "lgd/optim.hpp"

#include <cmath>

#include "lgd/errors.hpp"

namespace lgd::nn {

void AdamWConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("AdamW: learning rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("AdamW: betas must lie in [0, 1)");
    }
    if (weight_decay < 0.0) throw ConfigError("AdamW: negative weight decay");
}

OptimState OptimState::for_blocks(const AdamWConfig& config, std::span<const std::span<double>> blocks) {
    config.validate();
    OptimState s;
    s.config = config;
    for (const auto& b : blocks) {
        s.first_moment.emplace_back(b.size(), 0.0);
        s.second_moment.emplace_back(b.size(), 0.0);
    }
    return s;
}

OptimState OptimState::for_params(const AdamWConfig& config, MlpParams& params) {
    const auto blocks = parameter_blocks(params);
    return for_blocks(config, blocks);
}

void adamw_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                OptimState& state, double lr_scale) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw DimensionError("adamw_step: block count mismatch");
    }
    const auto& cfg = state.config;
    ++state.step;
    const double lr = cfg.learning_rate * lr_scale;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto p = params[b];
        auto g = grads[b];
        auto& m = state.first_moment[b];
        auto& v = state.second_moment[b];
        if (p.size() != g.size() || p.size() != m.size()) throw DimensionError("adamw_step: block size mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

EmaParams make_ema(const MlpParams& params, double decay) {
    if (decay < 0.0 || decay > 1.0) throw ConfigError("EMA decay must lie in [0, 1]");
    return EmaParams{decay, params};
}

void ema_update(EmaParams& ema, const MlpParams& current) {
    if (!ema.shadow.shape_matches(current)) throw DimensionError("ema_update: shape mismatch");
    const double d = ema.decay;
    for (std::size_t li = 0; li < current.layers.size(); ++li) {
        auto& s = ema.shadow.layers[li];
        const auto& c = current.layers[li];
        auto sw = s.weight.values();
        auto cw = c.weight.values();
        // lerp is exact at d = 0, d = 1 and when current == shadow.
        for (std::size_t i = 0; i < sw.size(); ++i) sw[i] = std::lerp(cw[i], sw[i], d);
        for (std::size_t i = 0; i < s.bias.size(); ++i) s.bias[i] = std::lerp(c.bias[i], s.bias[i], d);
    }
}

}  // namespace lgd::nn
