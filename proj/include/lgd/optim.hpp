// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lgd/mlp.hpp"

namespace lgd::nn {

/// AdamW hyper-parameters. Defaults are the learner protocol: lr 1e-3,
/// betas (0.9, 0.999), decoupled weight decay 0.01.
struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
};

/// Optimizer state: one first/second moment buffer per parameter block.
struct OptimState {
    AdamWConfig config;
    std::int64_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    /// Zeroed moments shaped like the given blocks.
    static OptimState for_blocks(const AdamWConfig& config, std::span<const std::span<double>> blocks);
    static OptimState for_params(const AdamWConfig& config, MlpParams& params);
};

/// One AdamW update over matching parameter/gradient blocks; the effective
/// step size is learning_rate * lr_scale.
void adamw_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                OptimState& state, double lr_scale = 1.0);

/// Exponential moving average of a parameter set.
struct EmaParams {
    double decay = 0.99;
    MlpParams shadow;
};

EmaParams make_ema(const MlpParams& params, double decay);

/// shadow <- decay * shadow + (1 - decay) * current, elementwise.
void ema_update(EmaParams& ema, const MlpParams& current);

}  // namespace lgd::nn
