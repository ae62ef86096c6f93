// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "lgd/mlp.hpp"
#include "lgd/optim.hpp"

namespace lgd::nn {

/// Samples (one row each) with integer class labels.
struct LabeledSet {
    Tensor2 x;
    std::vector<int> y;

    std::size_t size() const noexcept { return y.size(); }
    bool empty() const noexcept { return y.empty(); }
    std::size_t dims() const noexcept { return x.cols(); }
    /// Throws unless rows and labels agree and every label lies in [0, classes).
    void validate(std::size_t classes) const;
    LabeledSet subset(std::span<const std::size_t> indices) const;
    void append(std::span<const double> features, int label);
};

/// Concatenation of two sets with the same feature width.
LabeledSet concat(const LabeledSet& a, const LabeledSet& b);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;      // mean minibatch loss over the epoch, nats
    double accuracy = 0.0;  // fraction of samples classified correctly during the epoch
};

/// Learning-rate multiplier as a function of the 0-based epoch index.
using LrSchedule = std::function<double(int epoch)>;

LrSchedule constant_lr();
/// Multiplies the rate by `factor` at each milestone epoch (0-based, inclusive).
LrSchedule step_decay_lr(std::vector<int> milestones, double factor);
/// Hard-label protocol: decays by 0.2 at 2/3 and 5/6 of `epochs`.
LrSchedule hard_label_lr(int epochs);

/// One pass over `data` in shuffled minibatches of cross-entropy AdamW
/// updates. Updates `ema` after every step when given.
EpochRecord train_epoch(MlpParams& params, const LabeledSet& data, OptimState& optim,
                        std::size_t batch_size, Rng& rng, double lr_scale, EmaParams* ema = nullptr);

struct TrainResult {
    MlpParams params;
    std::vector<EpochRecord> log;
};

/// Minibatch AdamW training. Deterministic for a fixed seed; zero epochs
/// returns the parameters untouched with an empty log.
TrainResult train_supervised(MlpParams params, const LabeledSet& data, OptimState optim, int epochs,
                             std::size_t batch_size, std::uint64_t seed,
                             const LrSchedule& schedule = constant_lr(), EmaParams* ema = nullptr);

/// Accuracy of `params` on `data`.
double evaluate_accuracy(const MlpParams& params, const LabeledSet& data);

/// epoch,loss,accuracy with a header row.
void write_training_log_csv(std::ostream& out, const std::vector<EpochRecord>& log);

}  // namespace lgd::nn
