// SPDX-License-Identifier: Apache-2.0
#include "lgd/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "lgd/errors.hpp"
#include "lgd/text_format.hpp"

namespace lgd::diffusion {

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("diffusion schedule needs at least one step");
    DiffusionSchedule s;
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta values must lie in (0, 1)");
        const double a = 1.0 - b;
        prod *= a;
        s.alpha_.push_back(a);
        s.alpha_bar_.push_back(prod);
        s.sigma_.push_back(std::sqrt(b));
    }
    s.beta_ = std::move(betas);
    return s;
}

void DiffusionSchedule::check_step(int t) const {
    if (t < 1 || t > steps()) {
        throw DomainError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
}

std::size_t DiffusionSchedule::index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
}

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    return DiffusionSchedule::from_betas(std::move(betas));
}

std::string schedule_csv(const DiffusionSchedule& sched) {
    std::string out = "t,beta,alpha,alpha_bar,sigma\n";
    for (int t = 1; t <= sched.steps(); ++t) {
        out += std::to_string(t);
        for (double v : {sched.beta(t), sched.alpha(t), sched.alpha_bar(t), sched.sigma(t)}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

Tensor2 forward_noise(const Tensor2& x0, int t, const Tensor2& eps, const DiffusionSchedule& sched) {
    nn::require_same_shape(x0, eps, "forward_noise");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor2 out(x0.rows(), x0.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a * x0.values()[i] + b * eps.values()[i];
    return out;
}

Tensor2 predict_clean(const Tensor2& x_t, int t, const Tensor2& eps, const DiffusionSchedule& sched) {
    nn::require_same_shape(x_t, eps, "predict_clean");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor2 out(x_t.rows(), x_t.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = (x_t.values()[i] - b * eps.values()[i]) / a;
    return out;
}

Tensor2 reverse_mean(const Tensor2& x_t, int t, const Tensor2& eps_hat, const DiffusionSchedule& sched) {
    nn::require_same_shape(x_t, eps_hat, "reverse_mean");
    const double beta = sched.beta(t);
    const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
    const double inv = 1.0 / std::sqrt(1.0 - beta);
    Tensor2 out(x_t.rows(), x_t.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.values()[i] = inv * (x_t.values()[i] - coef * eps_hat.values()[i]);
    }
    return out;
}

Tensor2 reverse_step(const Tensor2& x_t, int t, const Tensor2& eps_hat, const Tensor2& z,
                     const DiffusionSchedule& sched) {
    nn::require_same_shape(x_t, z, "reverse_step");
    Tensor2 mu = reverse_mean(x_t, t, eps_hat, sched);
    if (t == 1) return mu;
    const double s = sched.sigma(t);
    for (std::size_t i = 0; i < mu.size(); ++i) mu.values()[i] += s * z.values()[i];
    return mu;
}

void NoisePredictor::validate() const {
    backbone.validate();
    if (classes == 0 || class_embedding.rows() != classes) throw DimensionError("NoisePredictor: class table mismatch");
    if (time_embedding.cols() != class_embedding.cols()) throw DimensionError("NoisePredictor: embedding widths differ");
    if (backbone.input_dim() != input_dim + 2 * embed_dim()) throw DimensionError("NoisePredictor: backbone input width");
    if (backbone.output_dim() != input_dim) throw DimensionError("NoisePredictor: output dim must equal input dim");
}

NoisePredictor make_predictor(const PredictorShape& shape, int steps, Rng& rng) {
    if (steps < 1 || shape.classes == 0 || shape.input_dim == 0 || shape.embed_dim == 0) {
        throw ConfigError("make_predictor: invalid shape");
    }
    NoisePredictor p;
    p.input_dim = shape.input_dim;
    p.classes = shape.classes;
    p.backbone = nn::make_mlp({shape.input_dim + 2 * shape.embed_dim, shape.hidden, shape.input_dim, shape.activation}, rng);
    p.class_embedding = rng.normal_tensor(shape.classes, shape.embed_dim);
    p.time_embedding = Tensor2(static_cast<std::size_t>(steps), shape.embed_dim);
    for (int t = 1; t <= steps; ++t) {
        for (std::size_t j = 0; j < shape.embed_dim; ++j) {
            const double freq = std::pow(1000.0, -static_cast<double>(j / 2 * 2) / static_cast<double>(shape.embed_dim));
            const double arg = static_cast<double>(t) * freq;
            p.time_embedding(static_cast<std::size_t>(t - 1), j) = j % 2 == 0 ? std::sin(arg) : std::cos(arg);
        }
    }
    return p;
}

namespace {

Tensor2 build_input(const NoisePredictor& pred, const Tensor2& x_t, std::span<const int> t, std::span<const int> c) {
    if (x_t.cols() != pred.input_dim) throw DimensionError("predict_noise: input width mismatch");
    const std::size_t e = pred.embed_dim();
    const std::size_t d = pred.input_dim;
    Tensor2 in(x_t.rows(), d + 2 * e);
    for (std::size_t r = 0; r < x_t.rows(); ++r) {
        if (c[r] < 0 || static_cast<std::size_t>(c[r]) >= pred.classes) throw DomainError("predict_noise: class out of range");
        if (t[r] < 1 || t[r] > pred.steps()) throw DomainError("predict_noise: timestep out of range");
        auto row = in.row(r);
        auto x = x_t.row(r);
        std::copy(x.begin(), x.end(), row.begin());
        auto ce = pred.class_embedding.row(static_cast<std::size_t>(c[r]));
        std::copy(ce.begin(), ce.end(), row.begin() + static_cast<std::ptrdiff_t>(d));
        auto te = pred.time_embedding.row(static_cast<std::size_t>(t[r] - 1));
        std::copy(te.begin(), te.end(), row.begin() + static_cast<std::ptrdiff_t>(d + e));
    }
    return in;
}

}  // namespace

Tensor2 predict_noise(const NoisePredictor& pred, const Tensor2& x_t, std::span<const int> t, std::span<const int> c) {
    if (t.size() != x_t.rows() || c.size() != x_t.rows()) throw DimensionError("predict_noise: per-row conditioning size");
    return nn::forward(pred.backbone, build_input(pred, x_t, t, c));
}

Tensor2 predict_noise(const NoisePredictor& pred, const Tensor2& x_t, int t, int c) {
    const std::vector<int> ts(x_t.rows(), t), cs(x_t.rows(), c);
    return predict_noise(pred, x_t, ts, cs);
}

nn::Checkpoint to_checkpoint(const NoisePredictor& pred) {
    return {pred.backbone, {{"class_embedding", pred.class_embedding}, {"time_embedding", pred.time_embedding}}};
}

NoisePredictor from_checkpoint(const nn::Checkpoint& ck) {
    NoisePredictor p;
    p.backbone = ck.mlp;
    p.class_embedding = ck.extra("class_embedding");
    p.time_embedding = ck.extra("time_embedding");
    p.classes = p.class_embedding.rows();
    p.input_dim = p.backbone.output_dim();
    p.validate();
    return p;
}

Tensor2 sample_batch(const NoisePredictor& pred, int c, const GuidanceHook* hook, const DiffusionSchedule& sched,
                     std::span<Rng> rngs) {
    if (c < 0 || static_cast<std::size_t>(c) >= pred.classes) throw DomainError("sample: class out of range");
    if (sched.steps() != pred.steps()) throw DimensionError("sample: schedule and predictor disagree on T");
    const std::size_t n = rngs.size(), d = pred.input_dim;
    Tensor2 x(n, d);
    for (std::size_t r = 0; r < n; ++r) rngs[r].fill_normal(x.row(r));
    Tensor2 z(n, d);
    for (int t = sched.steps(); t >= 1; --t) {
        Tensor2 eps = predict_noise(pred, x, t, c);
        if (hook && hook->active(t)) {
            eps = hook->adjust(x, t, c, eps);
            nn::require_same_shape(eps, x, "guidance hook output");
        }
        if (t > 1) {
            for (std::size_t r = 0; r < n; ++r) rngs[r].fill_normal(z.row(r));
        }
        x = reverse_step(x, t, eps, z, sched);
    }
    return x;
}

Tensor2 sample(const NoisePredictor& pred, int c, const GuidanceHook* hook, const DiffusionSchedule& sched, Rng& rng) {
    return sample_batch(pred, c, hook, sched, std::span<Rng>(&rng, 1));
}

PredictorTrainResult train_predictor(NoisePredictor pred, const nn::LabeledSet& data, const DiffusionSchedule& sched,
                                     const PredictorTrainOptions& options) {
    pred.validate();
    if (data.empty()) throw ConfigError("train_predictor: empty dataset");
    if (options.batch_size == 0) throw ConfigError("train_predictor: batch size must be positive");
    data.validate(pred.classes);
    if (data.dims() != pred.input_dim) throw DimensionError("train_predictor: data width mismatch");
    if (sched.steps() != pred.steps()) throw DimensionError("train_predictor: schedule and predictor disagree on T");

    PredictorTrainResult result{std::move(pred), {}};
    NoisePredictor& p = result.predictor;
    if (options.epochs <= 0) return result;

    auto param_blocks = nn::parameter_blocks(p.backbone);
    param_blocks.emplace_back(p.class_embedding.values());
    param_blocks.emplace_back(p.time_embedding.values());
    nn::OptimState optim = nn::OptimState::for_blocks(options.optim, param_blocks);

    nn::MlpParams grad = nn::zeros_like(p.backbone);
    Tensor2 class_grad(p.class_embedding.rows(), p.class_embedding.cols());
    Tensor2 time_grad(p.time_embedding.rows(), p.time_embedding.cols());
    auto grad_blocks = nn::parameter_blocks(std::as_const(grad));
    grad_blocks.emplace_back(class_grad.values());
    grad_blocks.emplace_back(time_grad.values());

    Rng rng(options.seed);
    const std::size_t d = p.input_dim, e = p.embed_dim();
    nn::ForwardTrace trace;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const double progress = static_cast<double>(epoch) / static_cast<double>(options.epochs);
        const double lr_scale = options.final_lr_ratio +
                                (1.0 - options.final_lr_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        const auto order = rng.permutation(data.size());
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t stop = std::min(order.size(), start + options.batch_size);
            const std::size_t n = stop - start;
            Tensor2 x0(n, d);
            std::vector<int> ts(n), cs(n);
            for (std::size_t i = 0; i < n; ++i) {
                auto src = data.x.row(order[start + i]);
                std::copy(src.begin(), src.end(), x0.row(i).begin());
                cs[i] = data.y[order[start + i]];
                ts[i] = static_cast<int>(rng.below(static_cast<std::size_t>(sched.steps()))) + 1;
            }
            Tensor2 eps = rng.normal_tensor(n, d);
            Tensor2 x_t(n, d);
            for (std::size_t i = 0; i < n; ++i) {
                const double ab = sched.alpha_bar(ts[i]);
                const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
                for (std::size_t j = 0; j < d; ++j) x_t(i, j) = a * x0(i, j) + b * eps(i, j);
            }
            Tensor2 out = nn::forward(p.backbone, build_input(p, x_t, ts, cs), &trace);
            Tensor2 dout(n, d);
            double loss = 0.0;
            const double scale = 1.0 / static_cast<double>(n * d);
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double diff = out.values()[i] - eps.values()[i];
                loss += diff * diff;
                dout.values()[i] = 2.0 * diff * scale;
            }
            loss_sum += loss / static_cast<double>(d);

            for (auto b : nn::parameter_blocks(grad)) std::fill(b.begin(), b.end(), 0.0);
            std::fill(class_grad.values().begin(), class_grad.values().end(), 0.0);
            std::fill(time_grad.values().begin(), time_grad.values().end(), 0.0);
            Tensor2 din = nn::backward(p.backbone, trace, dout, &grad);
            for (std::size_t i = 0; i < n; ++i) {
                auto row = din.row(i);
                auto cg = class_grad.row(static_cast<std::size_t>(cs[i]));
                auto tg = time_grad.row(static_cast<std::size_t>(ts[i] - 1));
                for (std::size_t j = 0; j < e; ++j) {
                    cg[j] += row[d + j];
                    tg[j] += row[d + e + j];
                }
            }
            nn::adamw_step(param_blocks, grad_blocks, optim, lr_scale);
        }
        result.loss_log.push_back(loss_sum / static_cast<double>(data.size()));
    }
    return result;
}

}  // namespace lgd::diffusion
