// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "lgd/diffusion.hpp"
#include "lgd/mlp.hpp"

namespace lgd::guidance {

using nn::Tensor2;
using Classifier = nn::MlpParams;

/// Guidance and selection hyper-parameters. Defaults: lambda 15, omega 0.5,
/// gamma 50, kappa 3, window [40, 180] of T = 200.
///
/// Sign conventions: the reverse mean subtracts the noise prediction, so a
/// term +g added to eps moves x_{t-1} along -g. guidance_sign = -1 therefore
/// moves samples up the learnability gradient, and deviation_sign = -1 turns
/// "subtract gamma grad G_D" into a push away from the nearest memory sample
/// (lower cosine similarity).
struct LearnabilityConfig {
    double omega = 0.5;
    double lambda = 15.0;
    double gamma = 50.0;
    int kappa = 3;
    int t_lo = 40;
    int t_hi = 180;
    int guidance_sign = -1;
    int deviation_sign = -1;
    /// Score the clean estimate x0_hat instead of x_t (off by default).
    bool score_on_denoised = false;

    void validate(int steps) const;
};

/// Per-class store of clean samples. Insertion order is preserved and used
/// for tie-breaking.
class MemoryBuffer {
public:
    MemoryBuffer() = default;
    MemoryBuffer(std::size_t classes, std::size_t dims) : dims_(dims), per_class_(classes) {}

    std::size_t classes() const noexcept { return per_class_.size(); }
    std::size_t dims() const noexcept { return dims_; }
    std::size_t size(int c) const;
    std::span<const double> at(int c, std::size_t i) const;
    /// Appends a sample to class c; values must be finite.
    void add(int c, std::span<const double> x);

private:
    void check_class(int c) const;

    std::size_t dims_ = 0;
    std::vector<std::vector<std::vector<double>>> per_class_;
};

/// S = L(learner, x, y) - omega * L(reference, x, y) for a single row x.
double learnability_score(const Classifier& learner, const Classifier& reference, const Tensor2& x, int y,
                          double omega);

/// Per-row scores for a batch sharing label y.
std::vector<double> learnability_scores(const Classifier& learner, const Classifier& reference, const Tensor2& x,
                                        int y, double omega);

/// Row r holds grad_x S(x_r, y) (each row's own per-sample gradient).
Tensor2 learnability_grad(const Classifier& learner, const Classifier& reference, const Tensor2& x, int y,
                          double omega);

/// Gradient norms below this skip the guidance term for the step.
inline constexpr double kMinGradNorm = 1e-12;

/// rho_t = sqrt(1 - abar_t) * eps_norm / grad_norm, or nullopt when
/// grad_norm < kMinGradNorm (guidance skipped for this step).
std::optional<double> rho(int t, double eps_norm, double grad_norm, const diffusion::DiffusionSchedule& sched);

/// eps + sign * lambda * rho_t * grad_S
Tensor2 apply_learnability_guidance(const Tensor2& eps_hat, const Tensor2& grad_s, double lambda, double rho_t,
                                    int sign);

/// Index of the Euclidean-nearest stored sample of class c (lowest index on
/// ties), or nullopt when the class memory is empty.
std::optional<std::size_t> nearest_memory(std::span<const double> x, const MemoryBuffer& memory, int c);

/// Cosine similarity x.ref / (|x| |ref|); 0 when either vector is zero.
double deviation_objective(std::span<const double> x, std::span<const double> ref);

/// grad_x of the cosine similarity, or nullopt when either vector is zero.
std::optional<std::vector<double>> deviation_gradient(std::span<const double> x, std::span<const double> ref);

/// eps - sign * gamma * grad_G
Tensor2 apply_deviation_guidance(const Tensor2& eps_tilde, const Tensor2& grad_gd, double gamma, int sign);

/// eps + lambda * grad_log_p (classifier guidance baseline).
Tensor2 classifier_guidance(const Tensor2& eps_hat, const Tensor2& grad_logp, double lambda);

/// Running totals of what the hook did; optional per-row CSV stream of
/// t, grad_norm, rho, score.
struct GuidanceTelemetry {
    std::int64_t guided_rows = 0;
    std::int64_t learnability_skips = 0;
    std::int64_t deviation_skips = 0;
    double sum_grad_norm = 0.0;
    double sum_rho = 0.0;
    double sum_score = 0.0;
    std::ostream* trace = nullptr;

    void merge(const GuidanceTelemetry& other);
};

/// Guidance hook for learnability sampling. Inside the window it computes the
/// learnability gradient on x_t (or x0_hat), applies it scaled by rho_t, then
/// applies deviation guidance against the nearest memory sample of the class.
/// The classifiers, memory and telemetry must outlive the hook.
diffusion::GuidanceHook lgd_hook(const Classifier& learner, const Classifier& reference, const MemoryBuffer& memory,
                                 const LearnabilityConfig& cfg, const diffusion::DiffusionSchedule& sched,
                                 GuidanceTelemetry* telemetry = nullptr);

/// Baseline: classifier_guidance with grad_logp = sign * sqrt(1 - abar_t) *
/// grad log p(c | x_t) under `classifier`; active inside [t_lo, t_hi].
/// sign = -1 raises p(c | x) under the reverse-mean convention above.
diffusion::GuidanceHook classifier_guidance_hook(const Classifier& classifier, double scale, int t_lo, int t_hi,
                                                 int sign, const diffusion::DiffusionSchedule& sched);

}  // namespace lgd::guidance
