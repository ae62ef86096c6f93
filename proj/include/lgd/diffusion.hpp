// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lgd/checkpoint.hpp"
#include "lgd/mlp.hpp"
#include "lgd/optim.hpp"
#include "lgd/train.hpp"

namespace lgd::diffusion {

using nn::Tensor2;

/// Per-timestep noise constants. Timesteps are 1-based: t = 1 .. steps().
class DiffusionSchedule {
public:
    /// Builds the schedule from explicit betas; each must lie in (0, 1).
    static DiffusionSchedule from_betas(std::vector<double> betas);

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
    double sigma(int t) const { return sigma_.at(index(t)); }

    /// Throws DomainError unless 1 <= t <= steps().
    void check_step(int t) const;

private:
    std::size_t index(int t) const;

    std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

/// Linear beta ramp from beta_start (t = 1) to beta_end (t = T); sigma_t = sqrt(beta_t).
DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end);

/// CSV with header t,beta,alpha,alpha_bar,sigma; one row per timestep.
std::string schedule_csv(const DiffusionSchedule& sched);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor2 forward_noise(const Tensor2& x0, int t, const Tensor2& eps, const DiffusionSchedule& sched);

/// Clean-sample estimate: x0 = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
Tensor2 predict_clean(const Tensor2& x_t, int t, const Tensor2& eps, const DiffusionSchedule& sched);

/// mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t)
Tensor2 reverse_mean(const Tensor2& x_t, int t, const Tensor2& eps_hat, const DiffusionSchedule& sched);

/// x_{t-1} = mu + sigma_t z; the noise term is dropped at t = 1.
Tensor2 reverse_step(const Tensor2& x_t, int t, const Tensor2& eps_hat, const Tensor2& z,
                     const DiffusionSchedule& sched);

/// Class- and timestep-conditional noise predictor. The backbone input is
/// [x, class_embedding[c], time_embedding[t-1]].
struct NoisePredictor {
    nn::MlpParams backbone;
    Tensor2 class_embedding;  // classes x embed_dim
    Tensor2 time_embedding;   // steps x embed_dim
    std::size_t input_dim = 0;
    std::size_t classes = 0;

    std::size_t embed_dim() const noexcept { return class_embedding.cols(); }
    int steps() const noexcept { return static_cast<int>(time_embedding.rows()); }
    void validate() const;

    friend bool operator==(const NoisePredictor&, const NoisePredictor&) = default;
};

struct PredictorShape {
    std::size_t input_dim = 2;
    std::size_t classes = 3;
    std::vector<std::size_t> hidden{128, 128, 128};
    std::size_t embed_dim = 16;
    nn::Activation activation = nn::Activation::gelu;
};

/// Random backbone; class embeddings are N(0, 1); timestep embeddings start
/// at sinusoidal features of t and are trained like every other parameter.
NoisePredictor make_predictor(const PredictorShape& shape, int steps, Rng& rng);

/// eps_hat for every row at a shared timestep and class.
Tensor2 predict_noise(const NoisePredictor& pred, const Tensor2& x_t, int t, int c);

/// eps_hat with per-row timesteps and classes.
Tensor2 predict_noise(const NoisePredictor& pred, const Tensor2& x_t, std::span<const int> t,
                      std::span<const int> c);

nn::Checkpoint to_checkpoint(const NoisePredictor& pred);
NoisePredictor from_checkpoint(const nn::Checkpoint& ck);

/// Adjusts the predicted noise inside the inclusive window [t_lo, t_hi].
/// The sampler never calls `adjust` outside the window.
struct GuidanceHook {
    int t_lo = 1;
    int t_hi = 0;
    std::function<Tensor2(const Tensor2& x_t, int t, int c, const Tensor2& eps_hat)> adjust;

    bool active(int t) const noexcept { return t >= t_lo && t <= t_hi; }
};

/// Ancestral sampling of one row per generator in `rngs`. Row r draws its
/// initial noise and every z from rngs[r] only, so each row is reproducible
/// from its own stream regardless of batch composition.
Tensor2 sample_batch(const NoisePredictor& pred, int c, const GuidanceHook* hook,
                     const DiffusionSchedule& sched, std::span<Rng> rngs);

/// One sample (1 x input_dim) from x_T ~ N(0, I) through T reverse steps.
Tensor2 sample(const NoisePredictor& pred, int c, const GuidanceHook* hook, const DiffusionSchedule& sched,
               Rng& rng);

struct PredictorTrainOptions {
    int epochs = 0;
    std::size_t batch_size = 128;
    nn::AdamWConfig optim{3e-3, 0.9, 0.999, 1e-8, 0.0};
    std::uint64_t seed = 0;
    /// Cosine decay of the learning rate to this fraction of its initial value.
    double final_lr_ratio = 0.1;
};

struct PredictorTrainResult {
    NoisePredictor predictor;
    std::vector<double> loss_log;  // mean epsilon-MSE per epoch
};

/// Minimizes E || eps - eps_hat(x_t, t, c) ||^2 / dim over uniformly drawn t
/// and eps. Zero epochs returns the predictor unchanged.
PredictorTrainResult train_predictor(NoisePredictor pred, const nn::LabeledSet& data,
                                     const DiffusionSchedule& sched, const PredictorTrainOptions& options);

}  // namespace lgd::diffusion
