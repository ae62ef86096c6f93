// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "lgd/mlp.hpp"

namespace lgd::nn {

/// Row-wise softmax, computed with the max-shift for stability.
Tensor2 softmax(const Tensor2& logits);

/// -log softmax(logits[r])[labels[r]] for each row, in nats.
std::vector<double> cross_entropy_rows(const Tensor2& logits, std::span<const int> labels);

/// Mean cross-entropy over rows. Throws DomainError for labels outside [0, cols).
double cross_entropy(const Tensor2& logits, std::span<const int> labels);

enum class Reduction { mean, sum };

/// Cross-entropy as an OutputObjective. With Reduction::sum every row's
/// gradient is that sample's own per-sample gradient.
OutputObjective cross_entropy_objective(std::vector<int> labels, Reduction reduction);

/// Sum over rows of log softmax(logits[r])[labels[r]].
OutputObjective log_probability_objective(std::vector<int> labels);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor2& logits, std::span<const int> labels);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> values) noexcept;

void check_labels(std::span<const int> labels, std::size_t classes, std::size_t rows);

}  // namespace lgd::nn
