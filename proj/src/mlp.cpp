// SPDX-License-Identifier: Apache-2.0
#include "lgd/mlp.hpp"

#include <cmath>
#include <numbers>

#include "lgd/errors.hpp"

namespace lgd::nn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void apply_activation(Activation act, std::span<const double> pre, std::span<double> out) {
    switch (act) {
        case Activation::identity:
            std::copy(pre.begin(), pre.end(), out.begin());
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
            break;
        case Activation::gelu:
            for (std::size_t i = 0; i < pre.size(); ++i) {
                out[i] = 0.5 * pre[i] * (1.0 + std::erf(pre[i] * kInvSqrt2));
            }
            break;
    }
}

// grad <- grad * act'(pre)
void activation_backward(Activation act, std::span<const double> pre, std::span<double> grad) {
    switch (act) {
        case Activation::identity:
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < pre.size(); ++i) {
                if (pre[i] <= 0.0) grad[i] = 0.0;
            }
            break;
        case Activation::gelu:
            for (std::size_t i = 0; i < pre.size(); ++i) {
                const double x = pre[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                grad[i] *= cdf + x * pdf;
            }
            break;
    }
}

}  // namespace

std::string_view to_string(Activation a) noexcept {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
    }
    return "identity";
}

Activation activation_from_string(std::string_view name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "gelu") return Activation::gelu;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::size_t MlpParams::input_dim() const {
    if (layers.empty()) throw DimensionError("MlpParams: no layers");
    return layers.front().inputs();
}

std::size_t MlpParams::output_dim() const {
    if (layers.empty()) throw DimensionError("MlpParams: no layers");
    return layers.back().outputs();
}

std::size_t MlpParams::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

bool MlpParams::shape_matches(const MlpParams& other) const noexcept {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].weight.same_shape(other.layers[i].weight) ||
            layers[i].bias.size() != other.layers[i].bias.size()) {
            return false;
        }
    }
    return true;
}

void MlpParams::validate() const {
    if (layers.empty() || parameter_count() == 0) throw DimensionError("MlpParams: empty network");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].bias.size() != layers[i].outputs()) {
            throw DimensionError("MlpParams: bias size mismatch in layer " + std::to_string(i));
        }
        if (i > 0 && layers[i].inputs() != layers[i - 1].outputs()) {
            throw DimensionError("MlpParams: layer " + std::to_string(i) + " does not compose");
        }
    }
}

MlpParams make_mlp(const MlpShape& shape, Rng& rng) {
    if (shape.input_dim == 0 || shape.output_dim == 0) throw ConfigError("make_mlp: zero-sized layer");
    MlpParams params;
    std::size_t in = shape.input_dim;
    auto add_layer = [&](std::size_t out, Activation act, double scale) {
        DenseLayer layer{Tensor2(in, out), std::vector<double>(out, 0.0), act};
        for (double& w : layer.weight.values()) w = scale * rng.normal();
        params.layers.push_back(std::move(layer));
        in = out;
    };
    for (std::size_t h : shape.hidden) {
        if (h == 0) throw ConfigError("make_mlp: zero-width hidden layer");
        add_layer(h, shape.hidden_activation, std::sqrt(2.0 / static_cast<double>(in)));
    }
    add_layer(shape.output_dim, Activation::identity,
              std::sqrt(1.0 / static_cast<double>(in + shape.output_dim)));
    return params;
}

MlpParams zeros_like(const MlpParams& params) {
    MlpParams z;
    z.layers.reserve(params.layers.size());
    for (const auto& l : params.layers) {
        z.layers.push_back({Tensor2(l.inputs(), l.outputs()), std::vector<double>(l.bias.size(), 0.0),
                            l.activation});
    }
    return z;
}

std::vector<std::span<double>> parameter_blocks(MlpParams& params) {
    std::vector<std::span<double>> blocks;
    for (auto& l : params.layers) {
        blocks.emplace_back(l.weight.values());
        blocks.emplace_back(l.bias);
    }
    return blocks;
}

std::vector<std::span<const double>> parameter_blocks(const MlpParams& params) {
    std::vector<std::span<const double>> blocks;
    for (const auto& l : params.layers) {
        blocks.emplace_back(l.weight.values());
        blocks.emplace_back(l.bias);
    }
    return blocks;
}

Tensor2 forward(const MlpParams& params, const Tensor2& x, ForwardTrace* trace) {
    if (trace) {
        trace->inputs.clear();
        trace->pre_activations.clear();
    }
    Tensor2 h = x;
    for (const auto& layer : params.layers) {
        Tensor2 pre = matmul(h, layer.weight);
        for (std::size_t r = 0; r < pre.rows(); ++r) {
            auto row = pre.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += layer.bias[j];
        }
        Tensor2 out(pre.rows(), pre.cols());
        apply_activation(layer.activation, pre.values(), out.values());
        if (trace) {
            trace->inputs.push_back(std::move(h));
            trace->pre_activations.push_back(std::move(pre));
        }
        h = std::move(out);
    }
    return h;
}

Tensor2 forward_classifier(const MlpParams& params, const Tensor2& x) {
    params.validate();
    if (x.cols() != params.input_dim()) {
        throw DimensionError("forward_classifier: input has " + std::to_string(x.cols()) +
                             " columns, network expects " + std::to_string(params.input_dim()));
    }
    return forward(params, x);
}

Tensor2 backward(const MlpParams& params, const ForwardTrace& trace, const Tensor2& grad_output,
                 MlpParams* param_grad) {
    Tensor2 grad = grad_output;
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& layer = params.layers[li];
        activation_backward(layer.activation, trace.pre_activations[li].values(), grad.values());
        if (param_grad) {
            auto& g = param_grad->layers[li];
            accumulate_transposed_a(trace.inputs[li], grad, g.weight);
            for (std::size_t r = 0; r < grad.rows(); ++r) {
                auto row = grad.row(r);
                for (std::size_t j = 0; j < row.size(); ++j) g.bias[j] += row[j];
            }
        }
        grad = matmul_transposed_b(grad, layer.weight);
    }
    return grad;
}

Tensor2 input_gradient(const MlpParams& params, const Tensor2& x, const OutputObjective& objective) {
    params.validate();
    if (x.cols() != params.input_dim()) throw DimensionError("input_gradient: input width mismatch");
    ForwardTrace trace;
    Tensor2 out = forward(params, x, &trace);
    Tensor2 grad(out.rows(), out.cols());
    objective(out, grad);
    return backward(params, trace, grad, nullptr);
}

MlpParams parameter_gradient(const MlpParams& params, const Tensor2& x,
                             const OutputObjective& objective) {
    params.validate();
    if (x.cols() != params.input_dim()) throw DimensionError("parameter_gradient: input width mismatch");
    ForwardTrace trace;
    Tensor2 out = forward(params, x, &trace);
    Tensor2 grad(out.rows(), out.cols());
    objective(out, grad);
    MlpParams pg = zeros_like(params);
    backward(params, trace, grad, &pg);
    return pg;
}

}  // namespace lgd::nn
