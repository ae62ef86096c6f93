// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lgd/analysis.hpp"
#include "lgd/data.hpp"
#include "lgd/errors.hpp"
#include "lgd/loss.hpp"
#include "test_oracles.hpp"

using namespace lgd;
using namespace lgd::analysis;
using nn::Tensor2;

namespace {

ProbeConfig small_probe(int epochs = 150) {
    ProbeConfig p;
    p.shape = {2, {32, 32}, 3, nn::Activation::relu};
    p.epochs = epochs;
    p.optim.learning_rate = 5e-3;
    return p;
}

nn::LabeledSet blobs3(std::uint64_t seed, std::size_t per_class) {
    harness::MixtureSpec spec;
    spec.modes_per_class = 1;
    spec.samples_per_class = per_class;
    spec.test_fraction = 0.0;
    spec.mode_std = 0.4;
    return harness::gen_data(spec, seed).train;
}

DynamicsPoint pt(double mu, double sigma) { return {0, mu, sigma, 0.0}; }

}  // namespace

TEST_CASE("redundancy: identical increments are fully redundant") {
    const auto inc = blobs3(1, 10);
    const auto m = cross_increment_matrix({inc, inc}, small_probe(), 3);
    CHECK(m.accuracy[0][1] == m.accuracy[0][0]);
    CHECK(m.accuracy[1][0] == m.accuracy[1][1]);
    CHECK(m.off_diagonal_mean == m.accuracy[0][0]);
    CHECK(redundancy_csv(m).rfind("train_increment,eval_1,eval_2,skipped\n", 0) == 0);
}

TEST_CASE("redundancy: unrelated labelings sit near chance") {
    const auto a = blobs3(2, 40);
    auto b = blobs3(3, 40);
    Rng rng(4);
    for (int& y : b.y) y = static_cast<int>(rng.below(3));
    const auto m = cross_increment_matrix({a, b}, small_probe(), 5);
    for (const auto& row : m.accuracy)
        for (double v : row) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    CHECK(m.accuracy[0][0] > 0.95);
    CHECK(std::abs(m.off_diagonal_mean - 1.0 / 3.0) < 0.12);
}

TEST_CASE("redundancy: skipped rows, permutation invariance, errors") {
    auto a = blobs3(5, 6), b = blobs3(6, 6);
    nn::LabeledSet single{Tensor2::from_rows({{1.0, 1.0}, {2.0, 2.0}}), {1, 1}};
    const auto m = cross_increment_matrix({a, single, b}, small_probe(60), 7);
    CHECK(m.skipped == std::vector<bool>{false, true, false});
    CHECK(std::isnan(m.accuracy[1][0]));
    const auto p = cross_increment_matrix({b, a, single}, small_probe(60), 7);
    CHECK(p.off_diagonal_mean == doctest::Approx(m.off_diagonal_mean).epsilon(1e-15));
    CHECK(p.accuracy[0][1] == m.accuracy[2][0]);
    CHECK_THROWS_AS(cross_increment_matrix({a}, small_probe(), 1), ConfigError);
}

TEST_CASE("error probe") {
    const auto inc1 = blobs3(8, 30), inc2 = blobs3(9, 30);
    const auto model = train_probe(inc1, small_probe(), 10);
    const auto errors = error_probe(model, {inc1, inc2});
    CHECK(errors[0] <= static_cast<std::size_t>(0.02 * inc1.size()));

    // Untrained models err at the chance rate on average.
    double total = 0.0;
    const int models = 200;
    for (int i = 0; i < models; ++i) {
        Rng rng(static_cast<std::uint64_t>(100 + i));
        const auto m = nn::make_mlp({2, {16}, 3, nn::Activation::relu}, rng);
        total += static_cast<double>(error_probe(m, {inc2})[0]);
    }
    CHECK(total / models == doctest::Approx(90.0 * 2.0 / 3.0).epsilon(0.1));
}

TEST_CASE("loss spikes") {
    using distill::TrainLogRow;
    const std::vector<TrainLogRow> log{{1, 0, 0, "start", 1.0, 0},   {1, 1, 1, "plateau", 0.1, 0},
                                       {2, 0, 1, "start", 0.6, 0},   {2, 1, 2, "plateau", 0.2, 0},
                                       {3, 0, 2, "start", 0.5, 0},   {3, 1, 3, "squeeze", 0.1, 0}};
    const auto s = loss_spikes(log);
    CHECK(s.stages == std::vector<int>{2, 3});
    CHECK(s.deltas[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.deltas[1] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(s.average == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(spikes_csv(s) == "stage,delta\n2,0.5\n3,0.3\n");

    CHECK_THROWS_AS(loss_spikes({log[0], log[1]}), FormatError);
    CHECK_THROWS_AS(loss_spikes({}), FormatError);
    CHECK_THROWS_AS(loss_spikes({log[0], log[4]}), FormatError);
    CHECK_THROWS_AS(loss_spikes({log[0], log[2], log[0]}), FormatError);
}

TEST_CASE("loss spikes: appending a copy of the data adds no signal") {
    const auto data = blobs3(11, 10);
    Rng rng(12);
    distill::LearnerState st;
    st.params = nn::make_mlp({2, {32}, 3, nn::Activation::relu}, rng);
    st.ema = nn::make_ema(st.params, 0.99);
    distill::TrainSchedule sched;
    sched.patience = 5;
    sched.squeeze = 5;
    std::vector<distill::TrainLogRow> log;
    st = distill::train_learner_to_plateau(st, data, sched, 13, 1, log);
    distill::train_learner_to_plateau(st, nn::concat(data, data), sched, 14, 2, log);
    CHECK(std::abs(loss_spikes(log).deltas[0]) < 1e-12);
}

TEST_CASE("dynamics: easy, mislabeled and constant series") {
    auto data = blobs3(15, 20);
    data.y[0] = (data.y[0] + 1) % 3;
    const auto d = dynamics_map(data, small_probe(), 40, 16, nullptr);
    CHECK(d.points.size() == data.size());
    CHECK(d.series.cols() == 40);
    CHECK(d.points[0].mu < 0.2);
    int easy = 0;
    for (std::size_t i = 1; i < d.points.size(); ++i)
        if (d.points[i].mu > 0.8) ++easy;
    CHECK(easy >= 55);
    for (std::size_t i = 0; i < d.points.size(); ++i) {
        const auto re = summarize_series(i, d.series.row(i), 0.0);
        CHECK(re.mu == d.points[i].mu);
        CHECK(re.sigma == d.points[i].sigma);
        CHECK(d.points[i].sigma >= 0.0);
        CHECK(d.points[i].sigma <= 0.5);
    }
    const auto again = dynamics_map(data, small_probe(), 40, 16, nullptr);
    CHECK(again.series == d.series);
    CHECK(dynamics_csv(d) == dynamics_csv(again));

    const std::vector<double> flat(10, 0.37);
    const auto c = summarize_series(3, flat, 0.5);
    CHECK(c.mu == doctest::Approx(0.37).epsilon(1e-15));
    CHECK(c.sigma < 1e-15);
    CHECK_THROWS_AS(dynamics_map(data, small_probe(), 1, 16, nullptr), ConfigError);
}

TEST_CASE("categories") {
    const Thresholds t;
    auto f = categorize(std::vector<DynamicsPoint>(5, pt(0.95, 0.01)), t);
    CHECK(f.easy == 1.0);
    f = categorize(std::vector<DynamicsPoint>(5, pt(0.05, 0.01)), t);
    CHECK(f.hard == 1.0);
    f = categorize({}, t);
    CHECK(f.easy == 0.0);
    CHECK(f.hard == 0.0);
    CHECK(f.informative == 0.0);
    f = categorize({pt(0.5, 0.3), pt(0.5, 0.15), pt(0.9, 0.05), pt(0.1, 0.05)}, t);
    CHECK(f.informative == 0.25);
    CHECK(f.easy == 0.25);
    CHECK(f.hard == 0.25);
    Thresholds bad;
    bad.mu_hi = 1.5;
    CHECK_THROWS_AS(categorize({}, bad), ConfigError);
}

TEST_CASE("js divergence") {
    const std::vector<DynamicsPoint> a(10, pt(0.95, 0.01)), b(10, pt(0.05, 0.01));
    CHECK(js_divergence(a, a) == 0.0);
    CHECK(js_divergence(a, b) == doctest::Approx(std::numbers::ln2).epsilon(1e-5));
    CHECK_THROWS_AS(js_divergence({}, a), DomainError);
    CHECK_THROWS_AS(js_divergence(a, b, 1), ConfigError);
    CHECK_THROWS_AS(js_divergence(a, b, 20, 0.0), ConfigError);

    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<DynamicsPoint> p, q;
        for (int i = 0; i < 25; ++i) p.push_back(pt(rng.uniform(), 0.5 * rng.uniform()));
        for (int i = 0; i < 40; ++i) q.push_back(pt(rng.uniform(), 0.5 * rng.uniform()));
        const double js = js_divergence(p, q);
        CHECK(js == js_divergence(q, p));
        CHECK(js >= 0.0);
        CHECK(js <= std::numbers::ln2 + 1e-9);
    }
    // Values on the upper edges land in the last bins.
    CHECK(js_divergence({pt(1.0, 0.5)}, {pt(0.99, 0.49)}) == 0.0);
}

TEST_CASE("in-distribution map") {
    nn::MlpParams ref;
    ref.layers.push_back({Tensor2::from_rows({{std::log(9.0), 0.0}}), {0.0, 0.0}, nn::Activation::identity});
    const nn::LabeledSet data{Tensor2::from_rows({{1.0}, {1.0}}), {0, 1}};
    const std::vector<DynamicsPoint> pts{{0, 0.7, 0.1, 0.0}, {1, 0.4, 0.2, 0.0}};
    const auto rows = in_distribution_map(data, ref, pts);
    CHECK(rows[0].ref_conf == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(rows[0].correct);
    CHECK(rows[0].mu == 0.7);
    CHECK(rows[1].ref_conf == doctest::Approx(0.1).epsilon(1e-14));
    CHECK_FALSE(rows[1].correct);
    CHECK(low_confidence_fraction(rows) == 0.5);
    CHECK(scatter_csv(rows).rfind("id,ref_conf,mu,correct\n0,", 0) == 0);
    CHECK_THROWS_AS(in_distribution_map(data, ref, {{5, 0.1, 0.1, 0.0}}), FormatError);
}
