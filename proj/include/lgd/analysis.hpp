// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgd/distill.hpp"
#include "lgd/train.hpp"

namespace lgd::analysis {

using nn::Tensor2;

/// Fresh cold-started classifier trained with the hard-label protocol
/// (learning rate x0.2 at 2/3 and 5/6 of training).
struct ProbeConfig {
    nn::MlpShape shape{2, {128, 128, 128}, 3, nn::Activation::relu};
    int epochs = 300;
    std::size_t batch_size = 32;
    nn::AdamWConfig optim;

    void validate() const;
};

nn::MlpParams train_probe(const nn::LabeledSet& data, const ProbeConfig& cfg, std::uint64_t seed);

/// Entry (r, c): accuracy on increment c of a probe trained on increment r
/// only. Rows whose increment holds fewer than two classes are skipped (NaN).
/// Each row's probe seed is derived from its increment's contents.
struct RedundancyMatrix {
    std::vector<std::vector<double>> accuracy;
    std::vector<bool> skipped;
    double off_diagonal_mean = 0.0;
    std::string label;
};

RedundancyMatrix cross_increment_matrix(const std::vector<nn::LabeledSet>& increments, const ProbeConfig& cfg,
                                        std::uint64_t seed);

/// Off-diagonal mean over rows that were not skipped.
double off_diagonal_mean(const std::vector<std::vector<double>>& m, const std::vector<bool>& skipped);

std::string redundancy_csv(const RedundancyMatrix& m);

/// Misclassified count of `model` on each increment.
std::vector<std::size_t> error_probe(const nn::MlpParams& model, const std::vector<nn::LabeledSet>& increments);

struct SpikeSeries {
    std::vector<int> stages;      // stage i >= 2
    std::vector<double> deltas;   // first loss of stage i - last loss of stage i - 1
    double average = 0.0;
};

/// Throws FormatError unless the log covers at least two consecutive stages.
SpikeSeries loss_spikes(const std::vector<distill::TrainLogRow>& log);
std::string spikes_csv(const SpikeSeries& s);

struct DynamicsPoint {
    std::uint64_t id = 0;
    double mu = 0.0;
    double sigma = 0.0;
    double ref_conf = 0.0;
};

/// mu and (population) sigma of a per-epoch probability series.
DynamicsPoint summarize_series(std::uint64_t id, std::span<const double> series, double ref_conf);

struct DynamicsResult {
    std::vector<DynamicsPoint> points;
    Tensor2 series;  // samples x epochs, GT-class probability after each epoch
};

/// Trains a fresh probe for `epochs` epochs (constant learning rate) and
/// records each sample's ground-truth probability after every epoch. Sample
/// ids are row indices. ref_conf comes from `reference` when given.
DynamicsResult dynamics_map(const nn::LabeledSet& data, const ProbeConfig& cfg, int epochs, std::uint64_t seed,
                            const nn::MlpParams* reference);

std::string dynamics_csv(const DynamicsResult& d);

struct Thresholds {
    double mu_hi = 0.8;
    double sigma_lo = 0.1;
    double mu_lo = 0.2;
    double sigma_hi = 0.2;

    void validate() const;
};

struct CategoryFractions {
    double easy = 0.0;
    double hard = 0.0;
    double informative = 0.0;
};

CategoryFractions categorize(const std::vector<DynamicsPoint>& points, const Thresholds& t);

/// Symmetric Jensen-Shannon divergence in nats between epsilon-smoothed
/// bins x bins histograms of (mu, sigma) over [0, 1] x [0, 0.5].
/// Throws DomainError for an empty point set.
double js_divergence(const std::vector<DynamicsPoint>& a, const std::vector<DynamicsPoint>& b, int bins = 20,
                     double epsilon = 1e-8);

struct ScatterRow {
    std::uint64_t id = 0;
    double ref_conf = 0.0;  // reference probability of the ground-truth class
    double mu = 0.0;
    bool correct = false;  // reference argmax equals the label
};

/// Joins dynamics points to dataset rows by id (row index). Throws
/// FormatError when a point id has no matching row.
std::vector<ScatterRow> in_distribution_map(const nn::LabeledSet& data, const nn::MlpParams& reference,
                                            const std::vector<DynamicsPoint>& points);

std::string scatter_csv(const std::vector<ScatterRow>& rows);

/// Fraction of rows whose reference ground-truth probability is below 0.5.
double low_confidence_fraction(const std::vector<ScatterRow>& rows);

}  // namespace lgd::analysis
