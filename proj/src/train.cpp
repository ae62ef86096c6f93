// SPDX-License-Identifier: Apache-2.0
#include "lgd/train.hpp"

#include <algorithm>
#include <ostream>

#include "lgd/errors.hpp"
#include "lgd/loss.hpp"
#include "lgd/text_format.hpp"

namespace lgd::nn {

void LabeledSet::validate(std::size_t classes) const {
    if (x.rows() != y.size()) throw DimensionError("LabeledSet: row/label count mismatch");
    check_labels(y, classes, x.rows());
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
    LabeledSet out;
    out.x = x.gather_rows(indices);
    out.y.reserve(indices.size());
    for (auto i : indices) out.y.push_back(y[i]);
    return out;
}

void LabeledSet::append(std::span<const double> features, int label) {
    if (!y.empty() && features.size() != x.cols()) throw DimensionError("LabeledSet::append: width mismatch");
    auto& store = x.storage();
    std::vector<double> values(store.begin(), store.end());
    values.insert(values.end(), features.begin(), features.end());
    x = Tensor2(y.size() + 1, features.size(), std::move(values));
    y.push_back(label);
}

LabeledSet concat(const LabeledSet& a, const LabeledSet& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.dims() != b.dims()) throw DimensionError("concat: feature widths differ");
    std::vector<double> values(a.x.values().begin(), a.x.values().end());
    values.insert(values.end(), b.x.values().begin(), b.x.values().end());
    LabeledSet out;
    out.x = Tensor2(a.size() + b.size(), a.dims(), std::move(values));
    out.y = a.y;
    out.y.insert(out.y.end(), b.y.begin(), b.y.end());
    return out;
}

LrSchedule constant_lr() {
    return [](int) { return 1.0; };
}

LrSchedule step_decay_lr(std::vector<int> milestones, double factor) {
    return [milestones = std::move(milestones), factor](int epoch) {
        double scale = 1.0;
        for (int m : milestones) {
            if (epoch >= m) scale *= factor;
        }
        return scale;
    };
}

LrSchedule hard_label_lr(int epochs) {
    return step_decay_lr({(2 * epochs) / 3, (5 * epochs) / 6}, 0.2);
}

EpochRecord train_epoch(MlpParams& params, const LabeledSet& data, OptimState& optim,
                        std::size_t batch_size, Rng& rng, double lr_scale, EmaParams* ema) {
    if (data.empty()) throw ConfigError("train_epoch: empty dataset");
    if (batch_size == 0) throw ConfigError("train_epoch: batch size must be positive");
    const auto order = rng.permutation(data.size());
    const auto param_views = parameter_blocks(params);
    MlpParams grad = zeros_like(params);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    ForwardTrace trace;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t stop = std::min(order.size(), start + batch_size);
        std::span<const std::size_t> idx(order.data() + start, stop - start);
        const LabeledSet batch = data.subset(idx);

        for (auto b : parameter_blocks(grad)) std::fill(b.begin(), b.end(), 0.0);
        Tensor2 logits = forward(params, batch.x, &trace);
        Tensor2 dlogits(logits.rows(), logits.cols());
        const double loss = cross_entropy_objective(batch.y, Reduction::mean)(logits, dlogits);
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            if (argmax(logits.row(r)) == static_cast<std::size_t>(batch.y[r])) ++hits;
        }
        loss_sum += loss * static_cast<double>(batch.size());
        backward(params, trace, dlogits, &grad);

        const auto grad_views = parameter_blocks(std::as_const(grad));
        adamw_step(param_views, grad_views, optim, lr_scale);
        if (ema) ema_update(*ema, params);
    }
    const double n = static_cast<double>(data.size());
    return {0, loss_sum / n, static_cast<double>(hits) / n};
}

TrainResult train_supervised(MlpParams params, const LabeledSet& data, OptimState optim, int epochs,
                             std::size_t batch_size, std::uint64_t seed, const LrSchedule& schedule,
                             EmaParams* ema) {
    if (data.empty()) throw ConfigError("train_supervised: empty dataset");
    params.validate();
    data.validate(params.output_dim());
    if (data.dims() != params.input_dim()) throw DimensionError("train_supervised: input width mismatch");
    TrainResult result{std::move(params), {}};
    Rng rng(seed);
    for (int e = 0; e < epochs; ++e) {
        EpochRecord rec = train_epoch(result.params, data, optim, batch_size, rng, schedule(e), ema);
        rec.epoch = e + 1;
        result.log.push_back(rec);
    }
    return result;
}

double evaluate_accuracy(const MlpParams& params, const LabeledSet& data) {
    return accuracy(forward_classifier(params, data.x), data.y);
}

void write_training_log_csv(std::ostream& out, const std::vector<EpochRecord>& log) {
    out << "epoch,loss,accuracy\n";
    for (const auto& r : log) out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.accuracy) << '\n';
}

}  // namespace lgd::nn
