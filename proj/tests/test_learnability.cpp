// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "lgd/data.hpp"
#include "lgd/errors.hpp"
#include "lgd/learnability.hpp"
#include "lgd/loss.hpp"
#include "test_oracles.hpp"

using namespace lgd;
using namespace lgd::guidance;
using nn::Tensor2;

namespace {

Tensor2 scalar(double v) { return Tensor2(1, 1, v); }

// 1 -> 2 linear classifier whose logits for x = 1 are [0, a].
Classifier logit_net(double a) {
    Classifier p;
    nn::DenseLayer l{Tensor2::from_rows({{0.0, a}}), {0.0, 0.0}, nn::Activation::identity};
    p.layers.push_back(l);
    return p;
}

Classifier random_net(std::uint64_t seed, nn::Activation act, std::size_t in = 2, std::size_t out = 3) {
    Rng rng(seed);
    return nn::make_mlp({in, {16, 16}, out, act}, rng);
}

}  // namespace

TEST_CASE("score examples") {
    const Tensor2 x = Tensor2::from_rows({{1.0}});
    // log(1 + e^a) = L gives a = log(e^L - 1).
    const auto learner = logit_net(std::log(std::exp(2.0) - 1.0));
    const auto reference = logit_net(std::log(std::exp(1.0) - 1.0));
    CHECK(learnability_score(learner, reference, x, 0, 0.5) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(learnability_score(learner, learner, x, 0, 1.0) == 0.0);
    const std::vector<int> y{0};
    CHECK(learnability_score(learner, reference, x, 0, 0.0) == nn::cross_entropy(nn::forward(learner, x), y));
    CHECK_THROWS_AS(learnability_score(learner, reference, x, 2, 0.5), DomainError);
}

TEST_CASE("property: score decomposes into the two cross-entropies exactly") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto a = random_net(seed, nn::Activation::relu), b = random_net(seed + 100, nn::Activation::gelu);
        Rng rng(seed);
        const Tensor2 x = rng.normal_tensor(1, 2);
        const int y = static_cast<int>(seed % 3);
        const double omega = rng.uniform();
        const std::vector<int> ys{y};
        CHECK(learnability_score(a, b, x, y, omega) ==
              nn::cross_entropy(nn::forward(a, x), ys) - omega * nn::cross_entropy(nn::forward(b, x), ys));
        CHECK(learnability_scores(a, b, x, y, omega)[0] == learnability_score(a, b, x, y, omega));
    }
}

TEST_CASE("gradient special cases") {
    const auto a = random_net(1, nn::Activation::gelu), b = random_net(2, nn::Activation::gelu);
    Rng rng(3);
    const Tensor2 x = rng.normal_tensor(5, 2);
    const Tensor2 g0 = learnability_grad(a, b, x, 1, 0.0);
    const Tensor2 direct =
        nn::input_gradient(a, x, nn::cross_entropy_objective(std::vector<int>(5, 1), nn::Reduction::sum));
    CHECK(g0 == direct);
    const Tensor2 zero = learnability_grad(a, a, x, 1, 1.0);
    for (double v : zero.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(learnability_grad(a, b, x, 3, 0.5), DomainError);
    CHECK_THROWS_AS(learnability_grad(a, b, Tensor2(1, 3), 0, 0.5), DimensionError);
}

TEST_CASE("property: learnability gradient matches central differences") {
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 24; ++seed) {
        const auto act = seed % 2 ? nn::Activation::relu : nn::Activation::gelu;
        const auto a = random_net(seed, act), b = random_net(seed + 1000, act);
        Rng rng(seed + 7);
        const Tensor2 x = rng.normal_tensor(1, 2);
        if (oracle::min_abs_kink_distance(a, x) < 1e-2 || oracle::min_abs_kink_distance(b, x) < 1e-2) continue;
        const int y = static_cast<int>(rng.below(3));
        const double omega = rng.uniform();
        const Tensor2 fd = oracle::central_difference(
            x, [&](const Tensor2& xx) { return learnability_score(a, b, xx, y, omega); }, 1e-5);
        CHECK(oracle::relative_error(learnability_grad(a, b, x, y, omega), fd) < 1e-4);
        ++checked;
    }
}

TEST_CASE("rho examples") {
    const auto s75 = diffusion::DiffusionSchedule::from_betas({0.25});
    CHECK(*rho(1, 3.0, 3.0, s75) == doctest::Approx(0.5).epsilon(1e-15));
    const auto s19 = diffusion::DiffusionSchedule::from_betas({0.81});
    CHECK(*rho(1, 2.0, 4.0, s19) == doctest::Approx(0.45).epsilon(1e-14));
    const auto clean = diffusion::DiffusionSchedule::from_betas({1e-12});
    CHECK(*rho(1, 1.0, 1.0, clean) < 1e-5);
    CHECK_FALSE(rho(1, 1.0, 1e-13, s75).has_value());
    CHECK_FALSE(rho(1, 1.0, 0.0, s75).has_value());
    CHECK(rho(1, 1.0, 1e-12, s75).has_value());
    CHECK_THROWS_AS(rho(2, 1.0, 1.0, s75), DomainError);
}

TEST_CASE("property: rho normalizes the gradient magnitude") {
    const auto s = diffusion::make_schedule(200, 1e-4, 0.02);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor2 eps = rng.normal_tensor(1, 3), g = rng.normal_tensor(1, 3);
        const int t = static_cast<int>(rng.below(200)) + 1;
        const double c = std::exp(4.0 * rng.normal());
        Tensor2 gc = g;
        for (double& v : gc.values()) v *= c;
        const auto r1 = rho(t, nn::l2_norm(eps.values()), nn::l2_norm(g.values()), s);
        const auto r2 = rho(t, nn::l2_norm(eps.values()), nn::l2_norm(gc.values()), s);
        const Tensor2 a = apply_learnability_guidance(eps, g, 15.0, *r1, -1);
        const Tensor2 b = apply_learnability_guidance(eps, gc, 15.0, *r2, -1);
        CHECK(oracle::relative_error(a, b) < 1e-12);
    }
}

TEST_CASE("guidance arithmetic examples") {
    CHECK(apply_learnability_guidance(scalar(1.0), scalar(0.2), 15.0, 0.1, 1)(0, 0) ==
          doctest::Approx(1.3).epsilon(1e-15));
    CHECK(apply_learnability_guidance(scalar(1.0), scalar(0.2), 0.0, 0.1, 1) == scalar(1.0));
    CHECK(apply_learnability_guidance(scalar(1.0), scalar(0.0), 15.0, 0.1, -1) == scalar(1.0));
    CHECK(apply_deviation_guidance(scalar(1.0), scalar(0.01), 50.0, 1)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(apply_deviation_guidance(scalar(1.0), scalar(0.01), 0.0, 1) == scalar(1.0));
    CHECK(apply_deviation_guidance(scalar(1.0), scalar(0.0), 50.0, -1) == scalar(1.0));
    CHECK(classifier_guidance(scalar(1.0), scalar(0.25), 2.0)(0, 0) == 1.5);
    CHECK(classifier_guidance(scalar(1.0), scalar(0.25), 0.0) == scalar(1.0));
    CHECK(classifier_guidance(scalar(1.0), scalar(0.0), 2.0) == scalar(1.0));
    CHECK_THROWS_AS(classifier_guidance(scalar(1.0), Tensor2(1, 2), 2.0), DimensionError);
}

TEST_CASE("nearest memory") {
    MemoryBuffer m(2, 2);
    const std::vector<double> q{1.0, 1.0};
    CHECK_FALSE(nearest_memory(q, m, 0).has_value());
    m.add(0, std::vector<double>{0.0, 0.0});
    CHECK(*nearest_memory(q, m, 0) == 0);
    m.add(0, std::vector<double>{10.0, 10.0});
    CHECK(*nearest_memory(q, m, 0) == 0);
    m.add(1, std::vector<double>{2.0, 1.0});
    m.add(1, std::vector<double>{0.0, 1.0});
    CHECK(*nearest_memory(q, m, 1) == 0);
    CHECK_THROWS_AS(m.add(0, std::vector<double>{NAN, 0.0}), DomainError);
    CHECK_THROWS_AS(m.add(2, std::vector<double>{0.0, 0.0}), DomainError);
    CHECK_THROWS_AS(m.add(0, std::vector<double>{0.0}), DimensionError);
}

TEST_CASE("deviation objective and gradient") {
    using V = std::vector<double>;
    CHECK(deviation_objective(V{3, 4}, V{3, 4}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(deviation_objective(V{1, 0}, V{0, 2}) == 0.0);
    CHECK(deviation_objective(V{1, 0}, V{1, 1}) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(deviation_objective(V{0, 0}, V{1, 1}) == 0.0);
    CHECK_FALSE(deviation_gradient(V{0, 0}, V{1, 1}).has_value());
    CHECK_FALSE(deviation_gradient(V{1, 1}, V{0, 0}).has_value());

    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor2 x = rng.normal_tensor(1, 4), r = rng.normal_tensor(1, 4);
        const auto g = deviation_gradient(x.row(0), r.row(0));
        const Tensor2 fd = oracle::central_difference(
            x, [&](const Tensor2& xx) { return deviation_objective(xx.row(0), r.row(0)); }, 1e-6);
        CHECK(oracle::relative_error(*g, fd.values()) < 1e-6);
        const double v = deviation_objective(x.row(0), r.row(0));
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("config validation") {
    LearnabilityConfig cfg;
    CHECK_NOTHROW(cfg.validate(200));
    CHECK_THROWS_AS(cfg.validate(100), ConfigError);
    cfg.kappa = 0;
    CHECK_THROWS_AS(cfg.validate(200), ConfigError);
    cfg = {};
    cfg.guidance_sign = 0;
    CHECK_THROWS_AS(cfg.validate(200), ConfigError);
    cfg = {};
    cfg.omega = -1;
    CHECK_THROWS_AS(cfg.validate(200), ConfigError);
}

namespace {

struct HookFixture {
    diffusion::DiffusionSchedule sched = diffusion::make_schedule(40, 1e-4, 0.05);
    diffusion::NoisePredictor pred;
    Classifier learner, reference;
    MemoryBuffer memory{3, 2};

    HookFixture() {
        Rng rng(31);
        diffusion::PredictorShape shape;
        shape.hidden = {16, 16};
        pred = diffusion::make_predictor(shape, 40, rng);
        learner = random_net(32, nn::Activation::relu);
        reference = random_net(33, nn::Activation::relu);
        memory.add(0, std::vector<double>{1.0, 0.5});
        memory.add(0, std::vector<double>{-1.0, 0.2});
    }

    Tensor2 run(const diffusion::GuidanceHook* hook, int c) const {
        std::vector<Rng> rngs{Rng(1), Rng(2), Rng(3)};
        return diffusion::sample_batch(pred, c, hook, sched, rngs);
    }
};

}  // namespace

TEST_CASE("lgd hook: identity and skip rules") {
    HookFixture f;
    LearnabilityConfig cfg;
    cfg.t_lo = 5;
    cfg.t_hi = 30;
    cfg.lambda = 0.0;
    cfg.gamma = 0.0;
    const auto off = lgd_hook(f.learner, f.reference, f.memory, cfg, f.sched);
    CHECK(f.run(&off, 0) == f.run(nullptr, 0));

    // Class 1 has no memory, so gamma only adds skips.
    cfg.lambda = 15.0;
    cfg.gamma = 0.0;
    const auto only_l = lgd_hook(f.learner, f.reference, f.memory, cfg, f.sched);
    cfg.gamma = 50.0;
    GuidanceTelemetry tel;
    const auto full = lgd_hook(f.learner, f.reference, f.memory, cfg, f.sched, &tel);
    CHECK(f.run(&full, 1) == f.run(&only_l, 1));
    CHECK(tel.deviation_skips == 3 * 26);
    CHECK(tel.guided_rows == 3 * 26);
    CHECK(tel.learnability_skips == 0);
    // With memory present deviation guidance changes the result.
    CHECK_FALSE(f.run(&full, 0) == f.run(&only_l, 0));
}

TEST_CASE("lgd hook: trajectories agree until the window opens") {
    HookFixture f;
    LearnabilityConfig cfg;
    cfg.t_lo = 5;
    cfg.t_hi = 25;
    const auto guided = lgd_hook(f.learner, f.reference, f.memory, cfg, f.sched);
    std::vector<Tensor2> plain(41), seen(41);
    diffusion::GuidanceHook rec_plain{1, 40, [&](const Tensor2& x, int t, int, const Tensor2& e) {
                                          plain[static_cast<std::size_t>(t)] = x;
                                          return e;
                                      }};
    diffusion::GuidanceHook rec_guided{1, 40, [&](const Tensor2& x, int t, int c, const Tensor2& e) {
                                           seen[static_cast<std::size_t>(t)] = x;
                                           return guided.active(t) ? guided.adjust(x, t, c, e) : e;
                                       }};
    f.run(&rec_plain, 0);
    f.run(&rec_guided, 0);
    for (int t = 40; t >= 25; --t) CHECK(seen[static_cast<std::size_t>(t)] == plain[static_cast<std::size_t>(t)]);
    CHECK_FALSE(seen[24] == plain[24]);
}

TEST_CASE("lgd hook: denoised scoring switch changes the guided trajectory") {
    HookFixture f;
    LearnabilityConfig cfg;
    cfg.t_lo = 5;
    cfg.t_hi = 25;
    cfg.gamma = 0.0;
    const auto a = lgd_hook(f.learner, f.reference, f.memory, cfg, f.sched);
    cfg.score_on_denoised = true;
    const auto b = lgd_hook(f.learner, f.reference, f.memory, cfg, f.sched);
    CHECK_FALSE(f.run(&a, 2) == f.run(&b, 2));
}

TEST_CASE("lgd hook: guided samples have higher learnability (Monte Carlo)") {
    harness::MixtureSpec spec;
    const auto data = harness::gen_data(spec, 41);
    const auto sched = diffusion::make_schedule(200, 1e-4, 0.02);
    Rng init(42);
    diffusion::PredictorShape shape;
    shape.hidden = {64, 64, 64};
    diffusion::PredictorTrainOptions popt;
    popt.epochs = 120;
    popt.seed = 43;
    const auto pred = diffusion::train_predictor(diffusion::make_predictor(shape, 200, init), data.train, sched, popt)
                          .predictor;

    Rng crng(44);
    const nn::MlpShape cshape{2, {64, 64}, 3, nn::Activation::relu};
    auto ref0 = nn::make_mlp(cshape, crng);
    const auto reference =
        nn::train_supervised(ref0, data.train, nn::OptimState::for_params({}, ref0), 60, 64, 45).params;
    // A weak learner trained on a few points of each class.
    std::vector<std::size_t> few;
    for (std::size_t i = 0; i < data.train.size() && few.size() < 15; i += 17) few.push_back(i);
    const auto subset = data.train.subset(few);
    auto learner0 = nn::make_mlp(cshape, crng);
    const auto learner =
        nn::train_supervised(learner0, subset, nn::OptimState::for_params({}, learner0), 30, 16, 46).params;
    MemoryBuffer memory(3, 2);
    for (std::size_t i : few) memory.add(data.train.y[i], data.train.x.row(i));

    LearnabilityConfig cfg;
    const auto hook = lgd_hook(learner, reference, memory, cfg, sched);
    std::vector<double> guided, plain;
    for (int c = 0; c < 3; ++c) {
        const std::size_t n = c < 2 ? 67 : 66;
        std::vector<Rng> r0, r1;
        for (std::size_t i = 0; i < n; ++i) {
            r0.emplace_back(derive_seed(47, "mc", {std::uint64_t(c), i}));
            r1.emplace_back(derive_seed(47, "mc", {std::uint64_t(c), i}));
        }
        const auto g = learnability_scores(learner, reference, diffusion::sample_batch(pred, c, &hook, sched, r0), c,
                                           cfg.omega);
        const auto p = learnability_scores(learner, reference, diffusion::sample_batch(pred, c, nullptr, sched, r1),
                                           c, cfg.omega);
        guided.insert(guided.end(), g.begin(), g.end());
        plain.insert(plain.end(), p.begin(), p.end());
    }
    REQUIRE(guided.size() == 200);
    const double p = oracle::welch_one_sided_p(guided, plain);
    INFO("guided mean " << oracle::mean_var(guided).first << " plain mean " << oracle::mean_var(plain).first
                        << " p " << p);
    CHECK(p < 0.01);
}
