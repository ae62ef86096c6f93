// SPDX-License-Identifier: Apache-2.0
#include "lgd/distill.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "lgd/errors.hpp"
#include "lgd/loss.hpp"
#include "lgd/text_format.hpp"

namespace lgd::distill {

std::string to_string(SeedMode m) { return m == SeedMode::random_real ? "random-real" : "unguided-diffusion"; }

SeedMode seed_mode_from_string(const std::string& s) {
    if (s == "unguided-diffusion") return SeedMode::unguided_diffusion;
    if (s == "random-real") return SeedMode::random_real;
    throw ConfigError("unknown seed mode '" + s + "' (expected unguided-diffusion or random-real)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::unguided: return "unguided";
        case Method::loss_only: return "loss-only";
        case Method::classifier_guidance: return "classifier-guidance";
        default: return "lgd";
    }
}

Method method_from_string(const std::string& s) {
    if (s == "lgd") return Method::lgd;
    if (s == "unguided") return Method::unguided;
    if (s == "loss-only") return Method::loss_only;
    if (s == "classifier-guidance") return Method::classifier_guidance;
    throw ConfigError("unknown method '" + s + "' (expected lgd, unguided, loss-only or classifier-guidance)");
}

void TrainSchedule::validate() const {
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (squeeze < 0) throw ConfigError("train.squeeze must be >= 0");
    if (!(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train.min_lr_ratio must lie in (0, 1]");
    if (!(min_delta >= 0.0)) throw ConfigError("train.min_delta must be >= 0");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1]");
    optim.validate();
}

PlateauTracker::PlateauTracker(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool PlateauTracker::observe(double loss) {
    if (loss < best_ - min_delta_) {
        best_ = loss;
        stale_ = 0;
        return false;
    }
    best_ = std::min(best_, loss);
    return ++stale_ >= patience_;
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
    std::string out = "stage,epoch,global_epoch,phase,loss,accuracy\n";
    for (const auto& r : rows) {
        out += std::to_string(r.stage) + ',' + std::to_string(r.epoch) + ',' + std::to_string(r.global_epoch) + ',' +
               r.phase + ',' + format_double(r.loss) + ',' + format_double(r.accuracy) + '\n';
    }
    return out;
}

std::vector<TrainLogRow> parse_train_log_csv(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const std::size_t cs = t.column("stage"), ce = t.column("epoch"), cg = t.column("global_epoch"),
                      cp = t.column("phase"), cl = t.column("loss"), ca = t.column("accuracy");
    std::vector<TrainLogRow> rows;
    for (const auto& r : t.rows) {
        rows.push_back({static_cast<int>(parse_int(r[cs])), static_cast<int>(parse_int(r[ce])),
                        static_cast<int>(parse_int(r[cg])), r[cp], parse_double(r[cl]), parse_double(r[ca])});
    }
    return rows;
}

namespace {

std::pair<double, double> loss_and_accuracy(const nn::MlpParams& params, const nn::LabeledSet& data) {
    const Tensor2 logits = nn::forward_classifier(params, data.x);
    return {nn::cross_entropy(logits, data.y), nn::accuracy(logits, data.y)};
}

}  // namespace

LearnerState train_learner_to_plateau(LearnerState state, const nn::LabeledSet& data, const TrainSchedule& sched,
                                      std::uint64_t seed, int stage, std::vector<TrainLogRow>& log) {
    sched.validate();
    if (data.empty()) throw ConfigError("train_learner_to_plateau: empty dataset");
    data.validate(state.params.output_dim());
    int global = log.empty() ? 0 : log.back().global_epoch;
    {
        const auto [l, a] = loss_and_accuracy(state.params, data);
        log.push_back({stage, 0, global, "start", l, a});
    }
    nn::OptimState optim = nn::OptimState::for_params(sched.optim, state.params);
    Rng rng(seed);
    PlateauTracker plateau(sched.patience, sched.min_delta);
    int epoch = 0;
    for (int e = 0; e < sched.max_epochs; ++e) {
        nn::train_epoch(state.params, data, optim, sched.batch_size, rng, 1.0, &state.ema);
        const auto [l, a] = loss_and_accuracy(state.params, data);
        log.push_back({stage, ++epoch, ++global, "plateau", l, a});
        if (plateau.observe(l)) break;
    }
    for (int e = 0; e < sched.squeeze; ++e) {
        const double progress = static_cast<double>(e) / static_cast<double>(sched.squeeze);
        const double scale =
            sched.min_lr_ratio + (1.0 - sched.min_lr_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        nn::train_epoch(state.params, data, optim, sched.batch_size, rng, scale, &state.ema);
        const auto [l, a] = loss_and_accuracy(state.params, data);
        log.push_back({stage, ++epoch, ++global, "squeeze", l, a});
    }
    return state;
}

Tensor2 generate_candidates(int c, int stage, int position, int kappa, const diffusion::GuidanceHook* hook,
                            const diffusion::NoisePredictor& pred, const diffusion::DiffusionSchedule& sched,
                            std::uint64_t seed) {
    if (kappa < 1) throw ConfigError("kappa must be >= 1");
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(kappa));
    for (int k = 0; k < kappa; ++k) {
        rngs.emplace_back(derive_seed(seed, "candidate",
                                      {static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(c),
                                       static_cast<std::uint64_t>(position), static_cast<std::uint64_t>(k)}));
    }
    return diffusion::sample_batch(pred, c, hook, sched, rngs);
}

std::size_t argmax_first(const std::vector<double>& scores) {
    if (scores.empty()) throw ConfigError("selection needs at least one candidate");
    std::size_t best = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw DomainError("non-finite learnability score");
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

Selection select_top1(const Tensor2& candidates, int c, const nn::MlpParams& learner, const nn::MlpParams& reference,
                      double omega) {
    Selection s;
    s.scores = guidance::learnability_scores(learner, reference, candidates, c, omega);
    s.index = argmax_first(s.scores);
    return s;
}

void DistillConfig::validate() const {
    if (stages < 1) throw ConfigError("distill.stages must be >= 1");
    if (ipc < 1) throw ConfigError("distill.ipc must be >= 1");
    if (per_stage < 1) throw ConfigError("distill.per_stage must be >= 1");
    if (!(cg_scale >= 0.0)) throw ConfigError("distill.cg_scale must be >= 0");
    if (learner.input_dim == 0 || learner.output_dim < 2) throw ConfigError("learner shape is degenerate");
    train.validate();
}

guidance::LearnabilityConfig effective_guidance(const DistillConfig& cfg) {
    guidance::LearnabilityConfig g = cfg.guidance;
    switch (cfg.method) {
        case Method::unguided:
            g.lambda = 0.0;
            g.gamma = 0.0;
            g.kappa = 1;
            break;
        case Method::loss_only: g.omega = 0.0; break;
        case Method::classifier_guidance:
            g.gamma = 0.0;
            g.kappa = 1;
            break;
        case Method::lgd: break;
    }
    return g;
}

nn::LabeledSet to_labeled(const std::vector<DistilledSample>& samples, int stage) {
    std::size_t n = 0, d = 0;
    for (const auto& s : samples) {
        if (stage != 0 && s.stage != stage) continue;
        ++n;
        d = s.x.size();
    }
    nn::LabeledSet out{Tensor2(n, d), {}};
    std::size_t r = 0;
    for (const auto& s : samples) {
        if (stage != 0 && s.stage != stage) continue;
        if (s.x.size() != d) throw DimensionError("distilled samples have mixed dimensions");
        std::copy(s.x.begin(), s.x.end(), out.x.row(r++).begin());
        out.y.push_back(s.cls);
    }
    return out;
}

nn::LabeledSet DistillState::dataset() const { return to_labeled(samples); }

nn::LabeledSet DistillState::increment(int s) const {
    if (s < 1) throw DomainError("stages are numbered from 1");
    return to_labeled(samples, s);
}

namespace {

void check_inputs(const DistillConfig& cfg, const DistillInputs& in) {
    cfg.validate();
    in.predictor.validate();
    const std::size_t classes = in.predictor.classes;
    if (in.reference.output_dim() != classes || cfg.learner.output_dim != classes)
        throw ConfigError("predictor, reference and learner disagree on the class count");
    if (in.reference.input_dim() != in.predictor.input_dim || cfg.learner.input_dim != in.predictor.input_dim)
        throw ConfigError("predictor, reference and learner disagree on the input dimension");
    if (in.schedule.steps() != in.predictor.steps()) throw ConfigError("schedule and predictor disagree on T");
    effective_guidance(cfg).validate(in.schedule.steps());
}

void append_sample(DistillState& state, int stage, int c, int position, std::span<const double> x) {
    state.memory.add(c, x);
    state.samples.push_back({state.next_id++, stage, c, position, std::vector<double>(x.begin(), x.end())});
}

}  // namespace

void finish_stage(DistillState& state, const DistillConfig& cfg, const DistillInputs& in) {
    const nn::LabeledSet data = state.dataset();
    if (!cfg.warm_start || state.stage == 1) {
        Rng init(derive_seed(cfg.seed, "learner-init", {static_cast<std::uint64_t>(state.stage)}));
        state.learner.params = nn::make_mlp(cfg.learner, init);
        state.learner.ema = nn::make_ema(state.learner.params, cfg.train.ema_decay);
    }
    const std::size_t before = state.train_log.size();
    state.learner = train_learner_to_plateau(
        std::move(state.learner), data, cfg.train,
        derive_seed(cfg.seed, "learner-train", {static_cast<std::uint64_t>(state.stage)}), state.stage,
        state.train_log);
    StageRecord rec;
    rec.stage = state.stage;
    rec.dataset_size = data.size();
    rec.epochs = static_cast<int>(state.train_log.size() - before) - 1;
    rec.train_loss = state.train_log.back().loss;
    rec.train_accuracy = state.train_log.back().accuracy;
    rec.test_accuracy = in.test ? nn::evaluate_accuracy(state.learner.params, *in.test) : 0.0;
    state.stages.push_back(rec);
    state.stage_models.push_back(state.learner.params);
}

DistillState init_seed(const DistillConfig& cfg, const DistillInputs& in) {
    check_inputs(cfg, in);
    const std::size_t classes = in.predictor.classes, d = in.predictor.input_dim;
    DistillState state;
    state.memory = guidance::MemoryBuffer(classes, d);
    state.stage = 1;
    for (std::size_t c = 0; c < classes; ++c) {
        const int ci = static_cast<int>(c);
        if (cfg.seed_mode == SeedMode::random_real) {
            std::vector<std::size_t> pool;
            for (std::size_t i = 0; i < in.real_train.size(); ++i)
                if (in.real_train.y[i] == ci) pool.push_back(i);
            if (pool.size() < static_cast<std::size_t>(cfg.ipc))
                throw ConfigError("random-real seeding needs " + std::to_string(cfg.ipc) + " real samples of class " +
                                  std::to_string(c) + ", found " + std::to_string(pool.size()));
            Rng rng(derive_seed(cfg.seed, "seed-real", {c}));
            const auto order = rng.permutation(pool.size());
            for (int n = 0; n < cfg.ipc; ++n)
                append_sample(state, 1, ci, n, in.real_train.x.row(pool[order[static_cast<std::size_t>(n)]]));
        } else {
            std::vector<Rng> rngs;
            for (int n = 0; n < cfg.ipc; ++n)
                rngs.emplace_back(derive_seed(cfg.seed, "seed-sample", {c, static_cast<std::uint64_t>(n)}));
            const Tensor2 x = diffusion::sample_batch(in.predictor, ci, nullptr, in.schedule, rngs);
            for (int n = 0; n < cfg.ipc; ++n) append_sample(state, 1, ci, n, x.row(static_cast<std::size_t>(n)));
        }
    }
    finish_stage(state, cfg, in);
    return state;
}

void run_increment(DistillState& state, int n_i, const DistillConfig& cfg, const DistillInputs& in) {
    if (n_i < 1) throw ConfigError("increment size must be >= 1");
    if (state.stage < 1) throw ConfigError("run_increment needs a seeded state");
    const guidance::LearnabilityConfig g = effective_guidance(cfg);
    const int stage = state.stage + 1;
    // Guidance reads the EMA learner; selection scores with the learner itself.
    const nn::MlpParams guide_model = state.learner.ema.shadow;
    const nn::MlpParams score_model = state.learner.params;
    diffusion::GuidanceHook hook;
    const diffusion::GuidanceHook* hook_ptr = nullptr;
    if (cfg.method == Method::classifier_guidance) {
        hook = guidance::classifier_guidance_hook(in.reference, cfg.cg_scale, g.t_lo, g.t_hi, g.guidance_sign,
                                                  in.schedule);
        hook_ptr = &hook;
    } else if (g.lambda != 0.0 || g.gamma != 0.0) {
        hook = guidance::lgd_hook(guide_model, in.reference, state.memory, g, in.schedule, &state.telemetry);
        hook_ptr = &hook;
    }
    for (std::size_t c = 0; c < in.predictor.classes; ++c) {
        const int ci = static_cast<int>(c);
        for (int n = 0; n < n_i; ++n) {
            const Tensor2 cand =
                generate_candidates(ci, stage, n, g.kappa, hook_ptr, in.predictor, in.schedule, cfg.seed);
            Selection sel = select_top1(cand, ci, score_model, in.reference, g.omega);
            append_sample(state, stage, ci, n, cand.row(sel.index));
            state.selections.push_back({stage, ci, n, std::move(sel.scores), sel.index});
        }
    }
    state.stage = stage;
    finish_stage(state, cfg, in);
}

DistillState run_distillation(const DistillConfig& cfg, const DistillInputs& in) {
    DistillState state = init_seed(cfg, in);
    for (int i = 2; i <= cfg.stages; ++i) run_increment(state, cfg.per_stage, cfg, in);
    return state;
}

std::string distilled_csv(const std::vector<DistilledSample>& samples) {
    const std::size_t d = samples.empty() ? 0 : samples.front().x.size();
    std::string out = "stage,class,position";
    for (std::size_t j = 0; j < d; ++j) out += ",x" + std::to_string(j);
    out += '\n';
    for (const auto& s : samples) {
        out += std::to_string(s.stage) + ',' + std::to_string(s.cls) + ',' + std::to_string(s.position);
        for (double v : s.x) out += ',' + format_double(v);
        out += '\n';
    }
    return out;
}

std::vector<DistilledSample> parse_distilled_csv(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const std::size_t cs = t.column("stage"), cc = t.column("class"), cp = t.column("position");
    std::vector<std::size_t> feature_cols;
    for (std::size_t j = 0;; ++j) {
        const std::string name = "x" + std::to_string(j);
        bool found = false;
        for (std::size_t k = 0; k < t.header.size(); ++k)
            if (t.header[k] == name) {
                feature_cols.push_back(k);
                found = true;
            }
        if (!found) break;
    }
    if (feature_cols.empty()) throw FormatError("distilled dataset has no feature columns");
    std::vector<DistilledSample> out;
    for (const auto& r : t.rows) {
        DistilledSample s;
        s.id = out.size();
        s.stage = static_cast<int>(parse_int(r[cs]));
        s.cls = static_cast<int>(parse_int(r[cc]));
        s.position = static_cast<int>(parse_int(r[cp]));
        for (std::size_t k : feature_cols) s.x.push_back(parse_double(r[k]));
        out.push_back(std::move(s));
    }
    return out;
}

std::string selection_csv(const std::vector<SelectionRecord>& records) {
    std::string out = "stage,class,position,candidate,score,chosen\n";
    for (const auto& r : records) {
        for (std::size_t k = 0; k < r.scores.size(); ++k) {
            out += std::to_string(r.stage) + ',' + std::to_string(r.cls) + ',' + std::to_string(r.position) + ',' +
                   std::to_string(k) + ',' + format_double(r.scores[k]) + ',' + (k == r.chosen ? "1" : "0") + '\n';
        }
    }
    return out;
}

std::vector<SelectionRecord> parse_selection_csv(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const std::size_t cs = t.column("stage"), cc = t.column("class"), cp = t.column("position"),
                      ck = t.column("candidate"), cv = t.column("score"), ch = t.column("chosen");
    std::vector<SelectionRecord> out;
    for (const auto& r : t.rows) {
        const int stage = static_cast<int>(parse_int(r[cs])), c = static_cast<int>(parse_int(r[cc])),
                  pos = static_cast<int>(parse_int(r[cp]));
        const auto k = static_cast<std::size_t>(parse_int(r[ck]));
        if (k == 0) out.push_back({stage, c, pos, {}, 0});
        if (out.empty() || out.back().stage != stage || out.back().cls != c || out.back().position != pos ||
            out.back().scores.size() != k)
            throw FormatError("selection log rows are out of order");
        out.back().scores.push_back(parse_double(r[cv]));
        if (parse_int(r[ch]) == 1) out.back().chosen = k;
    }
    return out;
}

}  // namespace lgd::distill
