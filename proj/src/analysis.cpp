// SPDX-License-Identifier: Apache-2.0
#include "lgd/analysis.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "lgd/errors.hpp"
#include "lgd/loss.hpp"
#include "lgd/text_format.hpp"

namespace lgd::analysis {

void ProbeConfig::validate() const {
    if (epochs < 1) throw ConfigError("probe epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("probe batch size must be >= 1");
    if (shape.input_dim == 0 || shape.output_dim < 2) throw ConfigError("probe shape is degenerate");
    optim.validate();
}

nn::MlpParams train_probe(const nn::LabeledSet& data, const ProbeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng init(derive_seed(seed, "probe-init", {}));
    nn::MlpParams p = nn::make_mlp(cfg.shape, init);
    return nn::train_supervised(p, data, nn::OptimState::for_params(cfg.optim, p), cfg.epochs, cfg.batch_size,
                                derive_seed(seed, "probe-train", {}), nn::hard_label_lr(cfg.epochs))
        .params;
}

double off_diagonal_mean(const std::vector<std::vector<double>>& m, const std::vector<bool>& skipped) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < m.size(); ++r) {
        if (skipped[r]) continue;
        for (std::size_t c = 0; c < m[r].size(); ++c) {
            if (c == r) continue;
            sum += m[r][c];
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

namespace {

// Row seeds follow the increment's content so the matrix permutes with the increments.
std::uint64_t content_key(const nn::LabeledSet& s) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    mix(s.x.values().data(), s.x.size() * sizeof(double));
    mix(s.y.data(), s.y.size() * sizeof(int));
    return h;
}

}  // namespace

RedundancyMatrix cross_increment_matrix(const std::vector<nn::LabeledSet>& increments, const ProbeConfig& cfg,
                                        std::uint64_t seed) {
    if (increments.size() < 2) throw ConfigError("redundancy needs at least two increments");
    for (const auto& inc : increments)
        if (inc.empty()) throw ConfigError("redundancy: empty increment");
    const std::size_t k = increments.size();
    RedundancyMatrix m;
    m.accuracy.assign(k, std::vector<double>(k, std::numeric_limits<double>::quiet_NaN()));
    m.skipped.assign(k, false);
    for (std::size_t r = 0; r < k; ++r) {
        const std::set<int> labels(increments[r].y.begin(), increments[r].y.end());
        if (labels.size() < 2) {
            m.skipped[r] = true;
            continue;
        }
        const nn::MlpParams probe = train_probe(increments[r], cfg, derive_seed(seed, "redundancy-row", {content_key(increments[r])}));
        for (std::size_t c = 0; c < k; ++c) m.accuracy[r][c] = nn::evaluate_accuracy(probe, increments[c]);
    }
    m.off_diagonal_mean = off_diagonal_mean(m.accuracy, m.skipped);
    return m;
}

std::string redundancy_csv(const RedundancyMatrix& m) {
    std::string out = "train_increment";
    for (std::size_t c = 0; c < m.accuracy.size(); ++c) out += ",eval_" + std::to_string(c + 1);
    out += ",skipped\n";
    for (std::size_t r = 0; r < m.accuracy.size(); ++r) {
        out += std::to_string(r + 1);
        for (double v : m.accuracy[r]) out += ',' + (std::isnan(v) ? std::string("nan") : format_double(v));
        out += m.skipped[r] ? ",1\n" : ",0\n";
    }
    return out;
}

std::vector<std::size_t> error_probe(const nn::MlpParams& model, const std::vector<nn::LabeledSet>& increments) {
    std::vector<std::size_t> out;
    for (const auto& inc : increments) {
        const Tensor2 logits = nn::forward_classifier(model, inc.x);
        std::size_t errors = 0;
        for (std::size_t r = 0; r < inc.size(); ++r)
            if (nn::argmax(logits.row(r)) != static_cast<std::size_t>(inc.y[r])) ++errors;
        out.push_back(errors);
    }
    return out;
}

SpikeSeries loss_spikes(const std::vector<distill::TrainLogRow>& log) {
    if (log.empty()) throw FormatError("training log is empty");
    std::vector<int> order;
    std::unordered_map<int, std::pair<double, double>> first_last;
    for (const auto& row : log) {
        if (order.empty() || order.back() != row.stage) {
            if (first_last.count(row.stage)) throw FormatError("training log stages are interleaved");
            order.push_back(row.stage);
            first_last[row.stage] = {row.loss, row.loss};
        }
        first_last[row.stage].second = row.loss;
    }
    if (order.size() < 2) throw FormatError("training log needs at least two stages with boundary markers");
    SpikeSeries s;
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (order[i] != order[i - 1] + 1) throw FormatError("training log skips a stage boundary");
        s.stages.push_back(order[i]);
        s.deltas.push_back(first_last[order[i]].first - first_last[order[i - 1]].second);
    }
    for (double d : s.deltas) s.average += d;
    s.average /= static_cast<double>(s.deltas.size());
    return s;
}

std::string spikes_csv(const SpikeSeries& s) {
    std::string out = "stage,delta\n";
    for (std::size_t i = 0; i < s.stages.size(); ++i)
        out += std::to_string(s.stages[i]) + ',' + format_double(s.deltas[i]) + '\n';
    return out;
}

DynamicsPoint summarize_series(std::uint64_t id, std::span<const double> series, double ref_conf) {
    if (series.empty()) throw DomainError("dynamics series is empty");
    double mu = 0.0;
    for (double v : series) mu += v;
    mu /= static_cast<double>(series.size());
    double var = 0.0;
    for (double v : series) var += (v - mu) * (v - mu);
    var /= static_cast<double>(series.size());
    return {id, mu, std::sqrt(var), ref_conf};
}

DynamicsResult dynamics_map(const nn::LabeledSet& data, const ProbeConfig& cfg, int epochs, std::uint64_t seed,
                            const nn::MlpParams* reference) {
    cfg.validate();
    if (epochs < 2) throw ConfigError("dynamics needs at least two epochs");
    if (data.empty()) throw ConfigError("dynamics: empty dataset");
    data.validate(cfg.shape.output_dim);
    Rng init(derive_seed(seed, "dynamics-init", {}));
    nn::MlpParams p = nn::make_mlp(cfg.shape, init);
    nn::OptimState optim = nn::OptimState::for_params(cfg.optim, p);
    Rng rng(derive_seed(seed, "dynamics-train", {}));
    DynamicsResult out;
    out.series = Tensor2(data.size(), static_cast<std::size_t>(epochs));
    for (int e = 0; e < epochs; ++e) {
        nn::train_epoch(p, data, optim, cfg.batch_size, rng, 1.0);
        const Tensor2 prob = nn::softmax(nn::forward(p, data.x));
        for (std::size_t r = 0; r < data.size(); ++r)
            out.series(r, static_cast<std::size_t>(e)) = prob(r, static_cast<std::size_t>(data.y[r]));
    }
    Tensor2 ref_prob;
    if (reference) ref_prob = nn::softmax(nn::forward_classifier(*reference, data.x));
    for (std::size_t r = 0; r < data.size(); ++r) {
        const double rc = reference ? ref_prob(r, static_cast<std::size_t>(data.y[r])) : 0.0;
        out.points.push_back(summarize_series(r, out.series.row(r), rc));
    }
    return out;
}

std::string dynamics_csv(const DynamicsResult& d) {
    std::string out = "id,mu,sigma,ref_conf";
    for (std::size_t e = 0; e < d.series.cols(); ++e) out += ",p" + std::to_string(e + 1);
    out += '\n';
    for (std::size_t r = 0; r < d.points.size(); ++r) {
        const auto& p = d.points[r];
        out += std::to_string(p.id) + ',' + format_double(p.mu) + ',' + format_double(p.sigma) + ',' +
               format_double(p.ref_conf);
        for (double v : d.series.row(r)) out += ',' + format_double(v);
        out += '\n';
    }
    return out;
}

void Thresholds::validate() const {
    for (double v : {mu_hi, sigma_lo, mu_lo, sigma_hi})
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("category thresholds must lie in [0, 1]");
}

CategoryFractions categorize(const std::vector<DynamicsPoint>& points, const Thresholds& t) {
    t.validate();
    CategoryFractions f;
    if (points.empty()) return f;
    for (const auto& p : points) {
        if (p.sigma >= t.sigma_hi)
            f.informative += 1.0;
        else if (p.mu > t.mu_hi && p.sigma < t.sigma_lo)
            f.easy += 1.0;
        else if (p.mu < t.mu_lo && p.sigma < t.sigma_lo)
            f.hard += 1.0;
    }
    const double n = static_cast<double>(points.size());
    f.easy /= n;
    f.hard /= n;
    f.informative /= n;
    return f;
}

namespace {

std::vector<double> histogram(const std::vector<DynamicsPoint>& pts, int bins, double eps) {
    const auto b = static_cast<std::size_t>(bins);
    std::vector<double> h(b * b, 0.0);
    auto cell = [&](double v, double hi) {
        const double f = std::clamp(v / hi, 0.0, 1.0) * static_cast<double>(bins);
        return std::min(b - 1, static_cast<std::size_t>(f));
    };
    for (const auto& p : pts) h[cell(p.mu, 1.0) * b + cell(p.sigma, 0.5)] += 1.0;
    double total = 0.0;
    for (double& v : h) {
        v = v / static_cast<double>(pts.size()) + eps;
        total += v;
    }
    for (double& v : h) v /= total;
    return h;
}

}  // namespace

double js_divergence(const std::vector<DynamicsPoint>& a, const std::vector<DynamicsPoint>& b, int bins,
                     double epsilon) {
    if (bins < 2) throw ConfigError("js_divergence needs at least two bins");
    if (!(epsilon > 0.0)) throw ConfigError("js_divergence needs epsilon > 0");
    if (a.empty() || b.empty()) throw DomainError("js_divergence is undefined for an empty point set");
    const auto p = histogram(a, bins, epsilon), q = histogram(b, bins, epsilon);
    double kl_p = 0.0, kl_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        kl_p += p[i] * std::log(p[i] / m);
        kl_q += q[i] * std::log(q[i] / m);
    }
    return 0.5 * kl_p + 0.5 * kl_q;
}

std::vector<ScatterRow> in_distribution_map(const nn::LabeledSet& data, const nn::MlpParams& reference,
                                            const std::vector<DynamicsPoint>& points) {
    const Tensor2 prob = nn::softmax(nn::forward_classifier(reference, data.x));
    std::vector<ScatterRow> out;
    for (const auto& p : points) {
        if (p.id >= data.size()) throw FormatError("dynamics point " + std::to_string(p.id) + " has no dataset row");
        const std::size_t r = p.id;
        const auto y = static_cast<std::size_t>(data.y[r]);
        out.push_back({p.id, prob(r, y), p.mu, nn::argmax(prob.row(r)) == y});
    }
    return out;
}

std::string scatter_csv(const std::vector<ScatterRow>& rows) {
    std::string out = "id,ref_conf,mu,correct\n";
    for (const auto& r : rows)
        out += std::to_string(r.id) + ',' + format_double(r.ref_conf) + ',' + format_double(r.mu) + ',' +
               (r.correct ? "1" : "0") + '\n';
    return out;
}

double low_confidence_fraction(const std::vector<ScatterRow>& rows) {
    if (rows.empty()) return 0.0;
    double n = 0.0;
    for (const auto& r : rows)
        if (r.ref_conf < 0.5) n += 1.0;
    return n / static_cast<double>(rows.size());
}

}  // namespace lgd::analysis
