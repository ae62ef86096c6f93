// SPDX-License-Identifier: Apache-2.0
#include "lgd/learnability.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "lgd/errors.hpp"
#include "lgd/loss.hpp"
#include "lgd/text_format.hpp"

namespace lgd::guidance {

namespace {

void check_sign(int sign, const char* what) {
    if (sign != 1 && sign != -1) throw ConfigError(std::string(what) + " must be +1 or -1");
}

void check_nonneg(double v, const char* what) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(what) + " must be finite and >= 0");
}

}  // namespace

void LearnabilityConfig::validate(int steps) const {
    check_nonneg(omega, "omega");
    check_nonneg(lambda, "lambda");
    check_nonneg(gamma, "gamma");
    if (kappa < 1) throw ConfigError("kappa must be >= 1");
    if (t_lo < 1 || t_lo > t_hi || t_hi > steps)
        throw ConfigError("guidance window must satisfy 1 <= t_lo <= t_hi <= T");
    check_sign(guidance_sign, "guidance_sign");
    check_sign(deviation_sign, "deviation_sign");
}

std::size_t MemoryBuffer::size(int c) const {
    check_class(c);
    return per_class_[static_cast<std::size_t>(c)].size();
}

std::span<const double> MemoryBuffer::at(int c, std::size_t i) const {
    check_class(c);
    return per_class_[static_cast<std::size_t>(c)].at(i);
}

void MemoryBuffer::add(int c, std::span<const double> x) {
    check_class(c);
    if (x.size() != dims_) throw DimensionError("memory sample has the wrong dimension");
    for (double v : x)
        if (!std::isfinite(v)) throw DomainError("memory samples must be finite");
    per_class_[static_cast<std::size_t>(c)].emplace_back(x.begin(), x.end());
}

void MemoryBuffer::check_class(int c) const {
    if (c < 0 || static_cast<std::size_t>(c) >= per_class_.size())
        throw DomainError("class " + std::to_string(c) + " out of range");
}

double learnability_score(const Classifier& learner, const Classifier& reference, const Tensor2& x, int y,
                          double omega) {
    if (x.rows() != 1) throw DimensionError("learnability_score takes a single row");
    const std::vector<int> labels{y};
    return nn::cross_entropy(nn::forward_classifier(learner, x), labels) -
           omega * nn::cross_entropy(nn::forward_classifier(reference, x), labels);
}

std::vector<double> learnability_scores(const Classifier& learner, const Classifier& reference, const Tensor2& x,
                                        int y, double omega) {
    const std::vector<int> labels(x.rows(), y);
    auto a = nn::cross_entropy_rows(nn::forward_classifier(learner, x), labels);
    const auto b = nn::cross_entropy_rows(nn::forward_classifier(reference, x), labels);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= omega * b[i];
    return a;
}

Tensor2 learnability_grad(const Classifier& learner, const Classifier& reference, const Tensor2& x, int y,
                          double omega) {
    const std::vector<int> labels(x.rows(), y);
    nn::check_labels(labels, learner.output_dim(), x.rows());
    nn::check_labels(labels, reference.output_dim(), x.rows());
    if (x.cols() != learner.input_dim() || x.cols() != reference.input_dim())
        throw DimensionError("classifier input dimension does not match x");
    Tensor2 g = nn::input_gradient(learner, x, nn::cross_entropy_objective(labels, nn::Reduction::sum));
    if (omega != 0.0) {
        const Tensor2 r =
            nn::input_gradient(reference, x, nn::cross_entropy_objective(labels, nn::Reduction::sum));
        nn::axpy(-omega, r, g);
    }
    return g;
}

std::optional<double> rho(int t, double eps_norm, double grad_norm, const diffusion::DiffusionSchedule& sched) {
    sched.check_step(t);
    if (!(grad_norm >= kMinGradNorm)) return std::nullopt;
    return std::sqrt(1.0 - sched.alpha_bar(t)) * eps_norm / grad_norm;
}

Tensor2 apply_learnability_guidance(const Tensor2& eps_hat, const Tensor2& grad_s, double lambda, double rho_t,
                                    int sign) {
    nn::require_same_shape(eps_hat, grad_s, "apply_learnability_guidance");
    Tensor2 out = eps_hat;
    nn::axpy(sign * lambda * rho_t, grad_s, out);
    return out;
}

std::optional<std::size_t> nearest_memory(std::span<const double> x, const MemoryBuffer& memory, int c) {
    const std::size_t n = memory.size(c);
    if (x.size() != memory.dims()) throw DimensionError("query dimension does not match memory");
    std::optional<std::size_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const auto m = memory.at(c, i);
        double d = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) d += (x[j] - m[j]) * (x[j] - m[j]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

double deviation_objective(std::span<const double> x, std::span<const double> ref) {
    if (x.size() != ref.size()) throw DimensionError("deviation_objective: dimension mismatch");
    const double nx = nn::l2_norm(x), nr = nn::l2_norm(ref);
    if (nx == 0.0 || nr == 0.0) return 0.0;
    return nn::dot(x, ref) / (nx * nr);
}

std::optional<std::vector<double>> deviation_gradient(std::span<const double> x, std::span<const double> ref) {
    if (x.size() != ref.size()) throw DimensionError("deviation_gradient: dimension mismatch");
    const double nx = nn::l2_norm(x), nr = nn::l2_norm(ref);
    if (nx == 0.0 || nr == 0.0) return std::nullopt;
    const double xm = nn::dot(x, ref);
    std::vector<double> g(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) g[j] = ref[j] / (nx * nr) - xm * x[j] / (nx * nx * nx * nr);
    return g;
}

Tensor2 apply_deviation_guidance(const Tensor2& eps_tilde, const Tensor2& grad_gd, double gamma, int sign) {
    nn::require_same_shape(eps_tilde, grad_gd, "apply_deviation_guidance");
    Tensor2 out = eps_tilde;
    nn::axpy(-sign * gamma, grad_gd, out);
    return out;
}

Tensor2 classifier_guidance(const Tensor2& eps_hat, const Tensor2& grad_logp, double lambda) {
    nn::require_same_shape(eps_hat, grad_logp, "classifier_guidance");
    Tensor2 out = eps_hat;
    nn::axpy(lambda, grad_logp, out);
    return out;
}

void GuidanceTelemetry::merge(const GuidanceTelemetry& other) {
    guided_rows += other.guided_rows;
    learnability_skips += other.learnability_skips;
    deviation_skips += other.deviation_skips;
    sum_grad_norm += other.sum_grad_norm;
    sum_rho += other.sum_rho;
    sum_score += other.sum_score;
}

diffusion::GuidanceHook lgd_hook(const Classifier& learner, const Classifier& reference, const MemoryBuffer& memory,
                                 const LearnabilityConfig& cfg, const diffusion::DiffusionSchedule& sched,
                                 GuidanceTelemetry* telemetry) {
    cfg.validate(sched.steps());
    diffusion::GuidanceHook hook;
    hook.t_lo = cfg.t_lo;
    hook.t_hi = cfg.t_hi;
    if (cfg.lambda == 0.0 && cfg.gamma == 0.0) {
        hook.adjust = [](const Tensor2&, int, int, const Tensor2& eps) { return eps; };
        return hook;
    }
    hook.adjust = [&learner, &reference, &memory, cfg, &sched, telemetry](const Tensor2& x_t, int t, int c,
                                                                          const Tensor2& eps_hat) {
        Tensor2 out = eps_hat;
        if (cfg.lambda != 0.0) {
            const Tensor2 at = cfg.score_on_denoised ? diffusion::predict_clean(x_t, t, eps_hat, sched) : x_t;
            const Tensor2 grad = learnability_grad(learner, reference, at, c, cfg.omega);
            std::vector<double> scores;
            if (telemetry) scores = learnability_scores(learner, reference, at, c, cfg.omega);
            for (std::size_t r = 0; r < x_t.rows(); ++r) {
                const double gn = nn::l2_norm(grad.row(r));
                const auto rt = rho(t, nn::l2_norm(eps_hat.row(r)), gn, sched);
                if (telemetry) {
                    ++telemetry->guided_rows;
                    telemetry->sum_grad_norm += gn;
                    telemetry->sum_score += scores[r];
                    if (rt) telemetry->sum_rho += *rt;
                    if (telemetry->trace)
                        *telemetry->trace << t << ',' << c << ',' << lgd::format_double(gn) << ','
                                          << (rt ? lgd::format_double(*rt) : std::string("skip")) << ','
                                          << lgd::format_double(scores[r]) << '\n';
                }
                if (!rt) {
                    if (telemetry) ++telemetry->learnability_skips;
                    continue;
                }
                const double k = cfg.guidance_sign * cfg.lambda * *rt;
                auto o = out.row(r);
                const auto g = grad.row(r);
                for (std::size_t j = 0; j < o.size(); ++j) o[j] += k * g[j];
            }
        }
        if (cfg.gamma != 0.0) {
            for (std::size_t r = 0; r < x_t.rows(); ++r) {
                const auto near = nearest_memory(x_t.row(r), memory, c);
                std::optional<std::vector<double>> g;
                if (near) g = deviation_gradient(x_t.row(r), memory.at(c, *near));
                if (!g) {
                    if (telemetry) ++telemetry->deviation_skips;
                    continue;
                }
                auto o = out.row(r);
                for (std::size_t j = 0; j < o.size(); ++j) o[j] -= cfg.deviation_sign * cfg.gamma * (*g)[j];
            }
        }
        return out;
    };
    return hook;
}

diffusion::GuidanceHook classifier_guidance_hook(const Classifier& classifier, double scale, int t_lo, int t_hi,
                                                 int sign, const diffusion::DiffusionSchedule& sched) {
    check_nonneg(scale, "classifier guidance scale");
    check_sign(sign, "classifier guidance sign");
    if (t_lo < 1 || t_lo > t_hi || t_hi > sched.steps())
        throw ConfigError("guidance window must satisfy 1 <= t_lo <= t_hi <= T");
    diffusion::GuidanceHook hook;
    hook.t_lo = t_lo;
    hook.t_hi = t_hi;
    hook.adjust = [&classifier, scale, sign, &sched](const Tensor2& x_t, int t, int c, const Tensor2& eps_hat) {
        Tensor2 g = nn::input_gradient(classifier, x_t,
                                       nn::log_probability_objective(std::vector<int>(x_t.rows(), c)));
        const double k = sign * std::sqrt(1.0 - sched.alpha_bar(t));
        for (double& v : g.values()) v *= k;
        return classifier_guidance(eps_hat, g, scale);
    };
    return hook;
}

}  // namespace lgd::guidance
