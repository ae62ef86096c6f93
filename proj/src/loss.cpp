// SPDX-License-Identifier: Apache-2.0
#include "lgd/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lgd/errors.hpp"

namespace lgd::nn {

namespace {

// log-sum-exp of one row
double log_sum_exp(std::span<const double> row) {
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    return m + std::log(s);
}

}  // namespace

void check_labels(std::span<const int> labels, std::size_t classes, std::size_t rows) {
    if (labels.size() != rows) {
        throw DimensionError("labels: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(rows) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

Tensor2 softmax(const Tensor2& logits) {
    Tensor2 p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto out = p.row(r);
        const double m = *std::max_element(in.begin(), in.end());
        double s = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            out[j] = std::exp(in[j] - m);
            s += out[j];
        }
        for (double& v : out) v /= s;
    }
    return p;
}

std::vector<double> cross_entropy_rows(const Tensor2& logits, std::span<const int> labels) {
    check_labels(labels, logits.cols(), logits.rows());
    std::vector<double> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        out[r] = log_sum_exp(row) - row[static_cast<std::size_t>(labels[r])];
    }
    return out;
}

double cross_entropy(const Tensor2& logits, std::span<const int> labels) {
    const auto rows = cross_entropy_rows(logits, labels);
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (double v : rows) s += v;
    return s / static_cast<double>(rows.size());
}

OutputObjective cross_entropy_objective(std::vector<int> labels, Reduction reduction) {
    return [labels = std::move(labels), reduction](const Tensor2& logits, Tensor2& grad) {
        const auto losses = cross_entropy_rows(logits, labels);
        Tensor2 p = softmax(logits);
        const double scale =
            reduction == Reduction::mean ? 1.0 / static_cast<double>(logits.rows()) : 1.0;
        double total = 0.0;
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            total += losses[r];
            auto g = grad.row(r);
            auto pr = p.row(r);
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = scale * pr[j];
            g[static_cast<std::size_t>(labels[r])] -= scale;
        }
        return total * scale;
    };
}

OutputObjective log_probability_objective(std::vector<int> labels) {
    return [labels = std::move(labels)](const Tensor2& logits, Tensor2& grad) {
        const auto losses = cross_entropy_rows(logits, labels);
        Tensor2 p = softmax(logits);
        double total = 0.0;
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            total -= losses[r];
            auto g = grad.row(r);
            auto pr = p.row(r);
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = -pr[j];
            g[static_cast<std::size_t>(labels[r])] += 1.0;
        }
        return total;
    };
}

std::size_t argmax(std::span<const double> values) noexcept {
    std::size_t best = 0;
    for (std::size_t j = 1; j < values.size(); ++j) {
        if (values[j] > values[best]) best = j;
    }
    return best;
}

double accuracy(const Tensor2& logits, std::span<const int> labels) {
    check_labels(labels, logits.cols(), logits.rows());
    if (logits.rows() == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        if (argmax(logits.row(r)) == static_cast<std::size_t>(labels[r])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

}  // namespace lgd::nn
