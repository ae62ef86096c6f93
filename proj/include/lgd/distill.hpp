// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "lgd/diffusion.hpp"
#include "lgd/learnability.hpp"
#include "lgd/train.hpp"

namespace lgd::distill {

using nn::Tensor2;

enum class SeedMode { unguided_diffusion, random_real };
std::string to_string(SeedMode m);
SeedMode seed_mode_from_string(const std::string& s);

/// Generation method. unguided = lambda = gamma = 0 with kappa = 1;
/// loss_only = omega 0; classifier_guidance = gradient of log p under the
/// reference model, kappa = 1.
enum class Method { lgd, unguided, loss_only, classifier_guidance };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Learner training: plateau on training loss, then a cosine squeeze.
struct TrainSchedule {
    int patience = 50;
    int squeeze = 50;
    double min_lr_ratio = 0.01;
    /// Improvements smaller than this do not reset the patience counter.
    double min_delta = 1e-4;
    /// Hard cap on plateau-phase epochs per stage.
    int max_epochs = 1000;
    std::size_t batch_size = 32;
    double ema_decay = 0.99;
    nn::AdamWConfig optim;

    void validate() const;
};

/// Early-stopping counter: observe() returns true once the best loss has not
/// improved by more than min_delta for `patience` consecutive epochs.
class PlateauTracker {
public:
    PlateauTracker(int patience, double min_delta);
    bool observe(double loss);
    double best() const noexcept { return best_; }

private:
    int patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_ = 0;
};

/// One learner-training log row. Every stage starts with a "start" row that
/// evaluates the incoming model on the enlarged dataset before any update.
struct TrainLogRow {
    int stage = 0;
    int epoch = 0;         // within the stage, 0 for the start row
    int global_epoch = 0;  // running count of trained epochs
    std::string phase;     // start | plateau | squeeze
    double loss = 0.0;     // mean cross-entropy on the stage dataset after the epoch
    double accuracy = 0.0;
};

std::string train_log_csv(const std::vector<TrainLogRow>& rows);
std::vector<TrainLogRow> parse_train_log_csv(const std::string& text);

struct LearnerState {
    nn::MlpParams params;
    nn::EmaParams ema;
};

/// Trains until the plateau rule fires (or max_epochs), then runs `squeeze`
/// cosine-decayed epochs down to min_lr_ratio. A fresh optimizer is used;
/// the EMA is updated after every step. Rows are appended to `log`.
LearnerState train_learner_to_plateau(LearnerState state, const nn::LabeledSet& data, const TrainSchedule& sched,
                                      std::uint64_t seed, int stage, std::vector<TrainLogRow>& log);

/// kappa candidates (kappa x dims) for one position; candidate k draws from
/// the stream derive_seed(seed, "candidate", {stage, c, position, k}).
Tensor2 generate_candidates(int c, int stage, int position, int kappa, const diffusion::GuidanceHook* hook,
                            const diffusion::NoisePredictor& pred, const diffusion::DiffusionSchedule& sched,
                            std::uint64_t seed);

struct Selection {
    std::size_t index = 0;
    std::vector<double> scores;
};

/// Index of the highest score, lowest index on ties. Throws on empty input or
/// a non-finite score.
std::size_t argmax_first(const std::vector<double>& scores);

Selection select_top1(const Tensor2& candidates, int c, const nn::MlpParams& learner, const nn::MlpParams& reference,
                      double omega);

struct DistilledSample {
    std::uint64_t id = 0;
    int stage = 0;
    int cls = 0;
    int position = 0;
    std::vector<double> x;

    friend bool operator==(const DistilledSample&, const DistilledSample&) = default;
};

struct SelectionRecord {
    int stage = 0;
    int cls = 0;
    int position = 0;
    std::vector<double> scores;
    std::size_t chosen = 0;
};

struct StageRecord {
    int stage = 0;
    std::size_t dataset_size = 0;
    int epochs = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

struct DistillConfig {
    Method method = Method::lgd;
    guidance::LearnabilityConfig guidance;
    /// Strength for the classifier-guidance comparator.
    double cg_scale = 1.0;
    int stages = 5;  // K, including the seed stage
    int ipc = 10;
    int per_stage = 10;  // N_i for every increment i >= 2
    SeedMode seed_mode = SeedMode::unguided_diffusion;
    TrainSchedule train;
    nn::MlpShape learner{2, {128, 128, 128}, 3, nn::Activation::relu};
    bool warm_start = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Guidance settings after the method mapping is applied.
guidance::LearnabilityConfig effective_guidance(const DistillConfig& cfg);

/// Read-only inputs shared by every stage.
struct DistillInputs {
    const diffusion::NoisePredictor& predictor;
    const diffusion::DiffusionSchedule& schedule;
    const nn::MlpParams& reference;
    const nn::LabeledSet& real_train;
    const nn::LabeledSet* test = nullptr;
};

struct DistillState {
    std::vector<DistilledSample> samples;  // D_i, increments in order
    guidance::MemoryBuffer memory;
    LearnerState learner;
    int stage = 0;
    std::uint64_t next_id = 0;
    std::vector<StageRecord> stages;
    std::vector<SelectionRecord> selections;
    std::vector<TrainLogRow> train_log;
    std::vector<nn::MlpParams> stage_models;
    guidance::GuidanceTelemetry telemetry;

    nn::LabeledSet dataset() const;
    nn::LabeledSet increment(int stage) const;
};

/// Seed stage D_1: ipc samples per class and the memory built from them.
/// unguided_diffusion uses streams derive_seed(seed, "seed-sample", {c, n});
/// random_real draws real training rows without replacement.
DistillState init_seed(const DistillConfig& cfg, const DistillInputs& in);

/// Trains the learner on the current dataset and records the stage.
void finish_stage(DistillState& state, const DistillConfig& cfg, const DistillInputs& in);

/// One increment: for each class and position, generate kappa candidates,
/// keep the top-1, append it to the increment and the class memory; then
/// retrain on D_i.
void run_increment(DistillState& state, int n_i, const DistillConfig& cfg, const DistillInputs& in);

/// Seed stage then K - 1 increments.
DistillState run_distillation(const DistillConfig& cfg, const DistillInputs& in);

/// stage,class,position,x0,x1,...
std::string distilled_csv(const std::vector<DistilledSample>& samples);
std::vector<DistilledSample> parse_distilled_csv(const std::string& text);
/// stage,class,position,candidate,score,chosen
std::string selection_csv(const std::vector<SelectionRecord>& records);
std::vector<SelectionRecord> parse_selection_csv(const std::string& text);

/// Samples of the given stage as a labeled set.
nn::LabeledSet to_labeled(const std::vector<DistilledSample>& samples, int stage = 0);

}  // namespace lgd::distill
