#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "clb/drift.hpp"
#include "clb/errors.hpp"
#include "clb/rng.hpp"

using namespace clb;

namespace {

// Brute-force two-sample KS: evaluate both ECDFs at every observed point.
double ks_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> grid = a;
    grid.insert(grid.end(), b.begin(), b.end());
    double d = 0.0;
    for (double x : grid) {
        const auto below = [x](const std::vector<double>& xs) {
            std::size_t c = 0;
            for (double v : xs)
                if (v <= x) ++c;
            return static_cast<double>(c) / static_cast<double>(xs.size());
        };
        d = std::max(d, std::abs(below(a) - below(b)));
    }
    return d;
}

std::vector<double> uniform_draws(std::size_t n, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = rng.uniform(lo, hi);
    return out;
}

std::vector<double> gaussian_draws(std::size_t n, double mean, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = mean + sigma * rng.gaussian();
    return out;
}

Matrix column(const std::vector<double>& xs) {
    Matrix m(xs.size(), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) m.at(i, 0) = static_cast<float>(xs[i]);
    return m;
}

}  // namespace

TEST_CASE("ks statistic basics") {
    const auto same = uniform_draws(50, 0.0, 1.0, 1);
    CHECK(ks_two_sample(same, same) == 0.0);

    const auto ref = uniform_draws(100, 0.0, 1.0, 2);
    const auto cur = uniform_draws(100, 0.5, 1.5, 3);
    const double d = ks_two_sample(ref, cur);
    CHECK(d >= 0.45);
    CHECK(d == doctest::Approx(ks_oracle(ref, cur)));

    CHECK(ks_two_sample(cur, ref) == d);  // symmetry

    std::vector<double> tiny(10, 0.0);
    CHECK_THROWS_AS(ks_two_sample(tiny, ref), WindowError);
    CHECK_THROWS_AS(ks_two_sample(ref, tiny), WindowError);
}

TEST_CASE("ks matches the brute-force oracle on random windows") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = gaussian_draws(40 + trial, 0.0, 1.0, rng.next_u64());
        const auto b = gaussian_draws(60, 0.3, 1.2, rng.next_u64());
        CHECK(ks_two_sample(a, b) == doctest::Approx(ks_oracle(a, b)));
    }
}

TEST_CASE("ks threshold follows the closed form") {
    const double alpha = 0.05;
    const double c = std::sqrt(-std::log(alpha / 2.0) / 2.0);
    CHECK(ks_threshold(alpha, 100, 100) == doctest::Approx(c * std::sqrt(200.0 / 10000.0)));
    // larger alpha -> smaller threshold -> never fires less
    CHECK(ks_threshold(0.10, 100, 100) < ks_threshold(0.01, 100, 100));
}

TEST_CASE("psi basics") {
    std::vector<std::uint64_t> h1{10, 20, 30, 40};
    CHECK(psi_from_counts(h1, h1) == 0.0);

    std::vector<std::uint64_t> h2{40, 30, 20, 10};
    const double p = psi_from_counts(h1, h2);
    CHECK(p > 0.0);
    CHECK(psi_from_counts(h2, h1) == doctest::Approx(p));  // symmetric

    std::vector<std::uint64_t> short_hist{1, 2};
    CHECK_THROWS_AS(psi_from_counts(h1, short_hist), BinError);

    // +1 smoothing keeps empty bins finite
    std::vector<std::uint64_t> zeros{0, 0, 0, 0};
    CHECK(std::isfinite(psi_from_counts(h1, zeros)));
}

TEST_CASE("psi flags a one-sigma mean shift") {
    // Monte-Carlo oracle: 1000 trials of n=1000, 10 bins; at least 95%
    // of shifted windows must exceed the 0.2 industry threshold.
    Rng rng(11);
    std::size_t exceed = 0;
    const std::size_t trials = 1000;
    for (std::size_t t = 0; t < trials; ++t) {
        const auto ref = gaussian_draws(1000, 0.0, 1.0, rng.next_u64());
        const auto cur = gaussian_draws(1000, 1.0, 1.0, rng.next_u64());
        const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
        const auto ref_h = histogram(ref, *lo, *hi, 10);
        const auto cur_h = histogram(cur, *lo, *hi, 10);
        if (psi_from_counts(ref_h, cur_h) > 0.2) ++exceed;
    }
    CHECK(exceed >= trials * 95 / 100);
}

TEST_CASE("histogram clamps out-of-range values to edge bins") {
    std::vector<double> xs{-5.0, 0.1, 0.5, 0.9, 42.0};
    const auto h = histogram(xs, 0.0, 1.0, 2);
    // bins are half-open, so 0.5 lands in the upper one
    CHECK(h == std::vector<std::uint64_t>{2, 3});
    CHECK_THROWS_AS(histogram(xs, 0.0, 1.0, 0), BinError);
}

TEST_CASE("perf_decay fires on windowed accuracy drops") {
    std::vector<std::int32_t> labels(100), preds(100);
    for (int i = 0; i < 100; ++i) {
        labels[i] = i % 4;
        preds[i] = i < 90 ? labels[i] : (labels[i] + 1) % 4;  // 90% accurate
    }
    DriftReport ok = perf_decay(0.9, labels, preds, 0.1);
    CHECK_FALSE(ok.fired);
    CHECK(ok.statistic == doctest::Approx(0.9));

    for (int i = 75; i < 100; ++i) preds[i] = (labels[i] + 1) % 4;  // 75% accurate
    DriftReport bad = perf_decay(0.9, labels, preds, 0.1);
    CHECK(bad.fired);
    CHECK(bad.statistic == doctest::Approx(0.75));
    CHECK(bad.threshold == doctest::Approx(0.8));

    CHECK_THROWS_AS(perf_decay(0.9, {}, {}, 0.1), WindowError);
}

TEST_CASE("perf_decay false-fire rate at three binomial sigmas") {
    // Stationary stream at accuracy p: with delta = 3*sqrt(p(1-p)/w) the
    // one-sided false-fire rate stays around a tenth of a percent.
    const double p = 0.85;
    const std::size_t window = 400;
    const double delta = 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(window));
    Rng rng(21);
    std::size_t fires = 0;
    const std::size_t windows = 1000;
    for (std::size_t w = 0; w < windows; ++w) {
        std::vector<std::int32_t> labels(window, 0), preds(window, 0);
        for (std::size_t i = 0; i < window; ++i) preds[i] = rng.unit() < p ? 0 : 1;
        if (perf_decay(p, labels, preds, delta).fired) ++fires;
    }
    CHECK(fires <= windows / 100);  // <= 1%
}

TEST_CASE("monitor buffers into tumbling windows") {
    DriftConfig cfg;
    cfg.detector = Detector::ks;
    cfg.window = 30;
    DriftMonitor monitor(cfg, 1);

    // reference fills first; no reports yet
    auto r0 = monitor.observe(column(gaussian_draws(30, 0.0, 1.0, 1)));
    CHECK(r0.empty());
    CHECK(monitor.reference_ready());

    // fewer than a window: nothing
    auto r1 = monitor.observe(column(gaussian_draws(29, 0.0, 1.0, 2)));
    CHECK(r1.empty());
    CHECK(monitor.buffered() == 29);

    // the 30th observation completes exactly one window
    auto r2 = monitor.observe(column(gaussian_draws(1, 0.0, 1.0, 3)));
    REQUIRE(r2.size() == 1);
    CHECK(r2[0].window_id == 1);
    CHECK(r2[0].per_feature.size() == 1);
    CHECK(monitor.buffered() == 0);

    // a big batch can complete several windows at once
    auto r3 = monitor.observe(column(gaussian_draws(60, 0.0, 1.0, 4)));
    CHECK(r3.size() == 2);

    monitor.reset();
    CHECK_FALSE(monitor.reference_ready());
}

TEST_CASE("monitor detects a shifted stream within two windows") {
    DriftConfig cfg;
    cfg.detector = Detector::ks;
    cfg.window = 200;
    cfg.alpha = 0.05;

    Rng rng(5);
    std::size_t detected = 0;
    const std::size_t trials = 100;
    for (std::size_t t = 0; t < trials; ++t) {
        DriftMonitor monitor(cfg, 1);
        monitor.observe(column(gaussian_draws(200, 0.0, 1.0, rng.next_u64())));  // reference
        auto reports = monitor.observe(column(gaussian_draws(400, 1.0, 1.0, rng.next_u64())));
        REQUIRE(reports.size() == 2);
        if (reports[0].fired || reports[1].fired) ++detected;
    }
    CHECK(detected >= 95);
}

TEST_CASE("multi-feature ks applies a Bonferroni threshold") {
    DriftConfig cfg;
    cfg.detector = Detector::ks;
    cfg.window = 50;
    cfg.alpha = 0.05;
    DriftMonitor monitor(cfg, 3);

    Rng rng(13);
    auto rows = [&](std::size_t n, double shift_feature2) {
        Matrix m(n, 3);
        for (std::size_t i = 0; i < n; ++i) {
            m.at(i, 0) = static_cast<float>(rng.gaussian());
            m.at(i, 1) = static_cast<float>(rng.gaussian());
            m.at(i, 2) = static_cast<float>(rng.gaussian() + shift_feature2);
        }
        return m;
    };
    monitor.observe(rows(50, 0.0));
    auto reports = monitor.observe(rows(50, 3.0));  // large shift on one feature only
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].fired);
    CHECK(reports[0].threshold == doctest::Approx(ks_threshold(0.05 / 3.0, 50, 50)));
    REQUIRE(reports[0].per_feature.size() == 3);
    const auto& pf = reports[0].per_feature;
    CHECK(pf[2].statistic > pf[0].statistic);
    CHECK(reports[0].statistic == doctest::Approx(std::max({pf[0].statistic, pf[1].statistic, pf[2].statistic})));
}

TEST_CASE("stationary ks stream stays calibrated") {
    DriftConfig cfg;
    cfg.detector = Detector::ks;
    cfg.window = 100;
    cfg.alpha = 0.05;
    DriftMonitor monitor(cfg, 1);

    Rng rng(3);
    monitor.observe(column(gaussian_draws(100, 0.0, 1.0, rng.next_u64())));
    std::size_t fires = 0;
    const std::size_t windows = 200;
    for (std::size_t w = 0; w < windows; ++w) {
        auto reports = monitor.observe(column(gaussian_draws(100, 0.0, 1.0, rng.next_u64())));
        REQUIRE(reports.size() == 1);
        if (reports[0].fired) ++fires;
    }
    CHECK(fires <= static_cast<std::size_t>(2.0 * cfg.alpha * static_cast<double>(windows)));
}

TEST_CASE("perf_decay monitoring requires labels and a baseline") {
    DriftConfig cfg;
    cfg.detector = Detector::perf_decay;
    cfg.window = 20;
    cfg.decay_delta = 0.2;
    DriftMonitor monitor(cfg, 1);

    std::vector<std::int32_t> labels(20, 0), preds(20, 0);
    Matrix empty;
    CHECK_THROWS_AS(monitor.observe(empty, &labels, nullptr), DataError);
    CHECK_THROWS_AS(monitor.observe(empty, &labels, &preds), DataError);  // no baseline

    monitor.set_baseline(0.9);
    auto ok = monitor.observe(empty, &labels, &preds);
    REQUIRE(ok.size() == 1);
    CHECK_FALSE(ok[0].fired);

    for (auto& v : preds) v = 1;  // all wrong
    auto bad = monitor.observe(empty, &labels, &preds);
    REQUIRE(bad.size() == 1);
    CHECK(bad[0].fired);
}

TEST_CASE("drift config invariants are enforced") {
    DriftConfig cfg;
    cfg.window = 19;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.window = 20;
    cfg.alpha = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.alpha = 0.05;
    CHECK_NOTHROW(cfg.validate());

    // report JSON carries the contract fields
    DriftReport report;
    report.fired = true;
    report.detector = Detector::ks;
    report.statistic = 0.5;
    report.threshold = 0.2;
    report.window_id = 3;
    report.per_feature = {{0, 0.5}};
    const auto j = report.to_json();
    CHECK(j.at("fired") == true);
    CHECK(j.at("detector") == "ks");
    CHECK(j.at("window_id") == 3);
    CHECK(j.at("per_feature")[0].at("feature") == 0);
}
