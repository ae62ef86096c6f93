// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgd/rng.hpp"
#include "lgd/tensor.hpp"

namespace lgd::nn {

enum class Activation { identity, relu, gelu };

std::string_view to_string(Activation a) noexcept;
Activation activation_from_string(std::string_view name);

/// Fully connected layer: y = act(x W + b), W stored as (inputs x outputs).
struct DenseLayer {
    Tensor2 weight;
    std::vector<double> bias;
    Activation activation = Activation::identity;

    std::size_t inputs() const noexcept { return weight.rows(); }
    std::size_t outputs() const noexcept { return weight.cols(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Parameters of a multilayer perceptron. Used for classifiers (learner,
/// reference, EMA copy, probes) and as the noise-predictor backbone.
struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const noexcept;
    bool shape_matches(const MlpParams& other) const noexcept;
    /// Throws DimensionError unless consecutive layers compose and the net is non-empty.
    void validate() const;

    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct MlpShape {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::size_t output_dim = 0;
    Activation hidden_activation = Activation::relu;
};

/// He-scaled Gaussian init for rectifier-like layers, Xavier for the output layer; zero biases.
MlpParams make_mlp(const MlpShape& shape, Rng& rng);
MlpParams zeros_like(const MlpParams& params);

/// Flat views over every weight and bias array, in a fixed order
/// (layer 0 weight, layer 0 bias, layer 1 weight, ...).
std::vector<std::span<double>> parameter_blocks(MlpParams& params);
std::vector<std::span<const double>> parameter_blocks(const MlpParams& params);

/// Activations saved by a forward pass for use by backward().
struct ForwardTrace {
    std::vector<Tensor2> inputs;          // input to each layer
    std::vector<Tensor2> pre_activations; // x W + b for each layer
};

/// Forward pass without validation; fills `trace` when given.
Tensor2 forward(const MlpParams& params, const Tensor2& x, ForwardTrace* trace = nullptr);

/// Logits, one row per sample. Throws DimensionError when x.cols() != input_dim().
Tensor2 forward_classifier(const MlpParams& params, const Tensor2& x);

/// Reverse-mode pass. Given d(objective)/d(output), accumulates parameter
/// gradients into `param_grad` (when non-null) and returns d(objective)/d(x).
Tensor2 backward(const MlpParams& params, const ForwardTrace& trace, const Tensor2& grad_output,
                 MlpParams* param_grad);

/// Scalar objective of a network output. Returns the value and writes
/// d(value)/d(output) into `grad` (same shape as output).
using OutputObjective = std::function<double(const Tensor2& output, Tensor2& grad)>;

/// d(objective)/d(x) for objective(forward(params, x)).
Tensor2 input_gradient(const MlpParams& params, const Tensor2& x, const OutputObjective& objective);

/// Gradient of the objective with respect to every parameter (same layout as params).
MlpParams parameter_gradient(const MlpParams& params, const Tensor2& x,
                             const OutputObjective& objective);

}  // namespace lgd::nn
