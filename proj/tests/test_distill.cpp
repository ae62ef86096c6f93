// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "lgd/data.hpp"
#include "lgd/distill.hpp"
#include "lgd/errors.hpp"

using namespace lgd;
using namespace lgd::distill;
using nn::Tensor2;

namespace {

// Small, fast stand-ins for the real pipeline pieces.
struct Toy {
    harness::SplitData data = harness::gen_data(harness::MixtureSpec{}, 3);
    diffusion::DiffusionSchedule sched = diffusion::make_schedule(40, 1e-4, 0.05);
    diffusion::NoisePredictor pred;
    nn::MlpParams reference;

    Toy() {
        Rng rng(4);
        diffusion::PredictorShape shape;
        shape.hidden = {32, 32};
        diffusion::PredictorTrainOptions opt;
        opt.epochs = 20;
        opt.seed = 5;
        pred = diffusion::train_predictor(diffusion::make_predictor(shape, 40, rng), data.train, sched, opt).predictor;
        const nn::MlpShape cs{2, {32, 32}, 3, nn::Activation::relu};
        reference = nn::make_mlp(cs, rng);
        reference = nn::train_supervised(reference, data.train, nn::OptimState::for_params({}, reference), 30, 64, 6)
                        .params;
    }

    DistillInputs inputs() const { return {pred, sched, reference, data.train, &data.test}; }

    static DistillConfig config() {
        DistillConfig cfg;
        cfg.guidance.t_lo = 8;
        cfg.guidance.t_hi = 36;
        cfg.guidance.lambda = 1.0;
        cfg.guidance.gamma = 0.05;
        cfg.learner = {2, {32, 32}, 3, nn::Activation::relu};
        cfg.train.patience = 5;
        cfg.train.squeeze = 5;
        cfg.train.max_epochs = 40;
        cfg.stages = 3;
        cfg.ipc = 4;
        cfg.per_stage = 3;
        cfg.seed = 77;
        return cfg;
    }
};

const Toy& toy() {
    static const Toy t;
    return t;
}

}  // namespace

TEST_CASE("plateau rule") {
    PlateauTracker p(1, 0.0);
    const double losses[] = {5, 4, 3, 2, 1, 1, 1};
    int stopped = 0;
    for (int e = 0; e < 7; ++e)
        if (p.observe(losses[e])) {
            stopped = e + 1;
            break;
        }
    CHECK(stopped == 6);

    PlateauTracker q(3, 0.5);
    CHECK_FALSE(q.observe(10.0));
    CHECK_FALSE(q.observe(9.8));  // not enough improvement
    CHECK_FALSE(q.observe(9.0));  // resets
    CHECK_FALSE(q.observe(9.0));
    CHECK_FALSE(q.observe(9.0));
    CHECK(q.observe(9.0));
    CHECK_THROWS_AS(PlateauTracker(0, 0.0), ConfigError);
}

TEST_CASE("train to plateau: log layout, squeeze and accuracy") {
    const auto& t = toy();
    Rng rng(8);
    LearnerState s;
    s.params = nn::make_mlp({2, {64, 64}, 3, nn::Activation::relu}, rng);
    s.ema = nn::make_ema(s.params, 0.99);
    TrainSchedule sched;
    sched.patience = 10;
    sched.squeeze = 0;
    sched.max_epochs = 200;
    std::vector<TrainLogRow> log;
    const auto out = train_learner_to_plateau(s, t.data.train, sched, 9, 1, log);
    CHECK(log.front().phase == "start");
    CHECK(log.front().epoch == 0);
    for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].phase == "plateau");
    CHECK(log.back().accuracy >= 0.95);
    CHECK_FALSE(out.ema.shadow == s.ema.shadow);

    sched.squeeze = 7;
    std::vector<TrainLogRow> log2 = log;
    train_learner_to_plateau(out, t.data.train, sched, 10, 2, log2);
    int squeeze_rows = 0;
    for (const auto& r : log2)
        if (r.phase == "squeeze") ++squeeze_rows;
    CHECK(squeeze_rows == 7);
    CHECK(log2[log.size()].stage == 2);
    CHECK(log2[log.size()].global_epoch == log.back().global_epoch);
    CHECK(log2.back().global_epoch == static_cast<int>(log2.size()) - 2);
    CHECK(parse_train_log_csv(train_log_csv(log2)).size() == log2.size());
    CHECK_THROWS_AS(train_learner_to_plateau(out, nn::LabeledSet{Tensor2(0, 2), {}}, sched, 1, 1, log2), ConfigError);
}

TEST_CASE("candidates: streams, kappa 1 and reproducibility") {
    const auto& t = toy();
    const Tensor2 one = generate_candidates(1, 2, 5, 1, nullptr, t.pred, t.sched, 123);
    Rng direct(derive_seed(123, "candidate", {2, 1, 5, 0}));
    CHECK(one == diffusion::sample(t.pred, 1, nullptr, t.sched, direct));
    const Tensor2 three = generate_candidates(1, 2, 5, 3, nullptr, t.pred, t.sched, 123);
    CHECK(three == generate_candidates(1, 2, 5, 3, nullptr, t.pred, t.sched, 123));
    CHECK(std::vector<double>(three.row(0).begin(), three.row(0).end()) ==
          std::vector<double>(one.row(0).begin(), one.row(0).end()));
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = a + 1; b < 3; ++b) CHECK(three(a, 0) != three(b, 0));
    CHECK_THROWS_AS(generate_candidates(1, 2, 5, 0, nullptr, t.pred, t.sched, 123), ConfigError);
}

TEST_CASE("selection") {
    CHECK(argmax_first({0.2, 1.5, -0.3}) == 1);
    CHECK(argmax_first({0.7}) == 0);
    CHECK(argmax_first({1.0, 2.0, 2.0}) == 1);
    CHECK(argmax_first({3.0, 3.0}) == 0);
    CHECK_THROWS_AS(argmax_first({}), ConfigError);
    CHECK_THROWS_AS(argmax_first({1.0, NAN}), DomainError);

    const auto& t = toy();
    Rng rng(12);
    const Tensor2 cand = rng.normal_tensor(4, 2);
    const Selection s = select_top1(cand, 2, t.reference, t.reference, 0.5);
    CHECK(s.scores.size() == 4);
    for (double v : s.scores) CHECK(s.scores[s.index] >= v);
}

TEST_CASE("seed stage") {
    const auto& t = toy();
    auto cfg = Toy::config();
    cfg.ipc = 10;
    cfg.stages = 1;
    const auto a = init_seed(cfg, t.inputs());
    CHECK(a.samples.size() == 30);
    for (int c = 0; c < 3; ++c) CHECK(a.memory.size(c) == 10);
    CHECK(a.stages.size() == 1);
    const auto b = init_seed(cfg, t.inputs());
    CHECK(distilled_csv(a.samples) == distilled_csv(b.samples));

    cfg.seed_mode = SeedMode::random_real;
    const auto r = init_seed(cfg, t.inputs());
    std::set<std::vector<double>> seen;
    for (const auto& s : r.samples) seen.insert(s.x);
    CHECK(seen.size() == 30);
    cfg.ipc = 1000;
    CHECK_THROWS_AS(init_seed(cfg, t.inputs()), ConfigError);
}

TEST_CASE("distillation bookkeeping invariants") {
    const auto& t = toy();
    auto cfg = Toy::config();
    cfg.guidance.kappa = 3;
    const auto st = run_distillation(cfg, t.inputs());
    // |D_K| = C (ipc + sum N_i)
    CHECK(st.samples.size() == 3u * (4 + 2 * 3));
    CHECK(st.stages.size() == 3);
    for (std::size_t i = 1; i < st.stages.size(); ++i)
        CHECK(st.stages[i].dataset_size == st.stages[i - 1].dataset_size + 9);
    CHECK(st.selections.size() == 2u * 9);
    std::size_t candidates = 0;
    for (const auto& s : st.selections) {
        candidates += s.scores.size();
        for (double v : s.scores) CHECK(s.scores[s.chosen] >= v);
    }
    CHECK(candidates == 2u * 27);
    std::set<std::uint64_t> ids;
    std::set<std::vector<double>> values;
    for (const auto& s : st.samples) {
        ids.insert(s.id);
        values.insert(s.x);
    }
    CHECK(ids.size() == st.samples.size());
    CHECK(values.size() == st.samples.size());
    for (int c = 0; c < 3; ++c) {
        CHECK(st.memory.size(c) == 4 + 2 * 3);
        std::size_t k = 0;
        for (const auto& s : st.samples) {
            if (s.cls != c) continue;
            const auto m = st.memory.at(c, k++);
            CHECK(std::vector<double>(m.begin(), m.end()) == s.x);
        }
    }
    CHECK(st.telemetry.guided_rows > 0);
    // Stage boundaries appear in order in the log.
    int last = 0;
    for (const auto& r : st.train_log) {
        CHECK(r.stage >= last);
        last = r.stage;
    }

    const auto again = run_distillation(cfg, t.inputs());
    CHECK(distilled_csv(again.samples) == distilled_csv(st.samples));
    CHECK(selection_csv(again.selections) == selection_csv(st.selections));
    CHECK(train_log_csv(again.train_log) == train_log_csv(st.train_log));

    const auto parsed = parse_distilled_csv(distilled_csv(st.samples));
    CHECK(parsed == st.samples);
    CHECK(selection_csv(parse_selection_csv(selection_csv(st.selections))) == selection_csv(st.selections));
}

TEST_CASE("method mapping") {
    const auto& t = toy();
    auto cfg = Toy::config();
    cfg.stages = 2;
    cfg.method = Method::unguided;
    const auto u = run_distillation(cfg, t.inputs());
    cfg.method = Method::lgd;
    cfg.guidance.lambda = 0.0;
    cfg.guidance.gamma = 0.0;
    cfg.guidance.kappa = 1;
    const auto l = run_distillation(cfg, t.inputs());
    CHECK(distilled_csv(u.samples) == distilled_csv(l.samples));
    CHECK(u.telemetry.guided_rows == 0);

    cfg = Toy::config();
    cfg.method = Method::loss_only;
    CHECK(effective_guidance(cfg).omega == 0.0);
    CHECK(effective_guidance(cfg).lambda == cfg.guidance.lambda);
    cfg.method = Method::classifier_guidance;
    CHECK(effective_guidance(cfg).kappa == 1);
    cfg.stages = 2;
    const auto cg = run_distillation(cfg, t.inputs());
    CHECK(cg.samples.size() == 3u * 7);
    CHECK(method_from_string("loss-only") == Method::loss_only);
    CHECK(to_string(Method::classifier_guidance) == "classifier-guidance");
    CHECK_THROWS_AS(method_from_string("dit"), ConfigError);
}

TEST_CASE("single stage equals the seed dataset") {
    const auto& t = toy();
    auto cfg = Toy::config();
    cfg.stages = 1;
    const auto st = run_distillation(cfg, t.inputs());
    const auto seed = init_seed(cfg, t.inputs());
    CHECK(st.samples == seed.samples);
    CHECK(st.selections.empty());
}

TEST_CASE("cold start retrains from fresh parameters") {
    const auto& t = toy();
    auto cfg = Toy::config();
    cfg.stages = 2;
    cfg.warm_start = false;
    const auto cold = run_distillation(cfg, t.inputs());
    cfg.warm_start = true;
    const auto warm = run_distillation(cfg, t.inputs());
    // Same generated data; only the stage-2 learner differs.
    CHECK(distilled_csv(cold.samples) == distilled_csv(warm.samples));
    CHECK_FALSE(cold.stage_models.back() == warm.stage_models.back());
}
