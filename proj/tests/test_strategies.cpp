#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <map>
#include <set>

#include "clb/errors.hpp"
#include "clb/rng.hpp"
#include "clb/scenario.hpp"
#include "clb/strategies.hpp"

using namespace clb;

namespace {

std::vector<Pattern> numbered_patterns(std::size_t n, std::int32_t label = 0,
                                       std::size_t offset = 0) {
    std::vector<Pattern> out;
    for (std::size_t i = 0; i < n; ++i) {
        Pattern p;
        p.features = {static_cast<float>(offset + i)};
        p.label = label;
        out.push_back(std::move(p));
    }
    return out;
}

// Equal-size experiences over disjoint class pairs.
std::vector<Experience> blob_stream(std::size_t n_experiences, std::size_t per_class_train,
                                    std::uint64_t seed) {
    const std::size_t classes = n_experiences * 2;
    auto [train, test] = synth_blobs(classes, 4, per_class_train, 10, 0.4, seed);
    Scenario s = build_nc_scenario(train, test, classes, 2, 2, n_experiences, seed);
    return std::move(s.experiences);
}

ModelSpec small_spec(std::size_t classes, std::uint64_t seed) {
    return ModelSpec{4, {8}, classes, Activation::relu, seed};
}

}  // namespace

TEST_CASE("reservoir keeps everything below capacity") {
    ReplayBuffer buf;
    buf = buffer_update(std::move(buf), numbered_patterns(7), 10, SamplingKind::reservoir, 1);
    CHECK(buf.items.size() == 7);
    CHECK(buf.seen == 7);

    // capacity law at every step
    ReplayBuffer grow;
    for (std::size_t step = 0; step < 30; ++step) {
        grow = buffer_update(std::move(grow), numbered_patterns(3, 0, step * 3), 20,
                             SamplingKind::reservoir, step);
        CHECK(grow.items.size() == std::min<std::size_t>(grow.seen, 20));
    }
    CHECK(grow.seen == 90);
}

TEST_CASE("reservoir retention frequency approaches memory/seen") {
    // 5 items into capacity 3: each should be retained ~60% of the time.
    std::map<float, std::size_t> kept;
    const std::size_t trials = 10000;
    for (std::size_t seed = 0; seed < trials; ++seed) {
        ReplayBuffer buf;
        buf = buffer_update(std::move(buf), numbered_patterns(5), 3, SamplingKind::reservoir, seed);
        REQUIRE(buf.items.size() == 3);
        for (const auto& item : buf.items) kept[item.features[0]] += 1;
    }
    REQUIRE(kept.size() == 5);
    for (const auto& [feature, count] : kept) {
        const double freq = static_cast<double>(count) / static_cast<double>(trials);
        CHECK(freq == doctest::Approx(0.6).epsilon(0.05 / 0.6));
    }
}

TEST_CASE("degenerate replay keeps the full multiset") {
    ReplayBuffer buf;
    buf = buffer_update(std::move(buf), numbered_patterns(40), 100, SamplingKind::reservoir, 3);
    buf = buffer_update(std::move(buf), numbered_patterns(30, 1, 40), 100, SamplingKind::reservoir, 4);
    REQUIRE(buf.items.size() == 70);
    std::multiset<float> features;
    for (const auto& item : buf.items) features.insert(item.features[0]);
    for (std::size_t i = 0; i < 70; ++i) CHECK(features.count(static_cast<float>(i)) == 1);
}

TEST_CASE("class_balanced sampling enforces per-class quotas") {
    ReplayBuffer buf;
    std::vector<Pattern> mixed;
    for (std::size_t i = 0; i < 30; ++i) {
        Pattern p;
        p.features = {static_cast<float>(i)};
        p.label = static_cast<std::int32_t>(i % 2);
        mixed.push_back(std::move(p));
    }
    buf = buffer_update(std::move(buf), mixed, 10, SamplingKind::class_balanced, 9);
    CHECK(buf.items.size() <= 10);
    std::map<std::int32_t, std::size_t> per_class;
    for (const auto& item : buf.items) per_class[item.label] += 1;
    for (const auto& [label, count] : per_class) CHECK(count <= 5);

    // a third class shrinks the quota to floor(10/3) = 3
    buf = buffer_update(std::move(buf), numbered_patterns(6, 2, 100), 10,
                        SamplingKind::class_balanced, 10);
    per_class.clear();
    for (const auto& item : buf.items) per_class[item.label] += 1;
    for (const auto& [label, count] : per_class) CHECK(count <= 3);
}

TEST_CASE("make_strategy validates configs") {
    ModelSpec spec = small_spec(4, 42);

    StrategyConfig replay;
    replay.name = StrategyKind::replay;
    replay.memory_size = 5000;
    CHECK_NOTHROW(make_strategy(replay, spec));

    StrategyConfig broken = replay;
    broken.memory_size = 0;
    CHECK_THROWS_AS(make_strategy(broken, spec), ConfigError);

    broken = replay;
    broken.replay_ratio = 0.0;
    CHECK_THROWS_AS(make_strategy(broken, spec), ConfigError);

    StrategyConfig naive;
    naive.name = StrategyKind::naive;
    StrategyState a = make_strategy(naive, spec);
    StrategyState b = make_strategy(naive, spec);
    CHECK(a.params == b.params);
    CHECK(a.buffer.items.empty());
    CHECK(a.cumulative_store.empty());
}

TEST_CASE("naive trains on exactly the new data") {
    auto stream = blob_stream(3, 50, 21);  // 100 patterns per experience
    StrategyConfig cfg;
    cfg.name = StrategyKind::naive;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    StrategyState state = make_strategy(cfg, small_spec(6, 1));

    for (const auto& exp : stream) {
        TrainStats stats = train_experience(state, cfg, exp);
        CHECK(stats.patterns_trained_on == exp.train.size() * cfg.epochs);
        CHECK(stats.seconds >= 0.0);
    }
    CHECK(state.experiences_trained == 3);
    CHECK(state.seen_count == 300);
}

TEST_CASE("cumulative patterns grow linearly with history") {
    auto stream = blob_stream(4, 50, 33);
    StrategyConfig cfg;
    cfg.name = StrategyKind::cumulative;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    StrategyState state = make_strategy(cfg, small_spec(8, 2));

    for (std::size_t k = 0; k < stream.size(); ++k) {
        TrainStats stats = train_experience(state, cfg, stream[k]);
        CHECK(stats.patterns_trained_on == (k + 1) * 100 * cfg.epochs);
    }
}

TEST_CASE("replay pattern counts are paced by the new data") {
    auto stream = blob_stream(4, 100, 7);  // 200 patterns per experience
    StrategyConfig cfg;
    cfg.name = StrategyKind::replay;
    cfg.epochs = 2;
    cfg.batch_size = 20;
    cfg.lr = 0.05;
    cfg.memory_size = 400;
    cfg.replay_ratio = 0.5;
    StrategyState state = make_strategy(cfg, small_spec(8, 3));

    // Experience 0: empty buffer, no memory draws.
    TrainStats s0 = train_experience(state, cfg, stream[0]);
    CHECK(s0.patterns_trained_on == 200 * cfg.epochs);
    CHECK(state.buffer.items.size() == 200);

    // Experience 1: buffer has 200 items; each epoch mixes 200 new with 200 draws.
    TrainStats s1 = train_experience(state, cfg, stream[1]);
    CHECK(s1.patterns_trained_on == 400 * cfg.epochs);
    CHECK(state.buffer.items.size() == 400);

    // Saturated buffer: the per-experience count stays constant.
    TrainStats s2 = train_experience(state, cfg, stream[2]);
    TrainStats s3 = train_experience(state, cfg, stream[3]);
    CHECK(s2.patterns_trained_on == 400 * cfg.epochs);
    CHECK(s3.patterns_trained_on == s2.patterns_trained_on);
    CHECK(state.buffer.items.size() == 400);
    CHECK(state.buffer.seen == 800);
}

TEST_CASE("replay ratio shapes the minibatch mix") {
    auto stream = blob_stream(2, 64, 17);  // 128 per experience
    StrategyConfig cfg;
    cfg.name = StrategyKind::replay;
    cfg.epochs = 1;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    cfg.memory_size = 1000;
    cfg.replay_ratio = 0.25;
    StrategyState state = make_strategy(cfg, small_spec(4, 4));

    train_experience(state, cfg, stream[0]);
    // 8 memory draws per 24 new samples; 128 new → ceil pacing via chunks.
    TrainStats s1 = train_experience(state, cfg, stream[1]);
    // chunks: 5 full of 24 (+8 mem) = 160, final 8 new + round(8*8/24)=3 mem
    CHECK(s1.patterns_trained_on == 5 * 32 + 8 + 3);
}

TEST_CASE("cumulative training is stateless") {
    auto stream = blob_stream(4, 40, 11);
    StrategyConfig cfg;
    cfg.name = StrategyKind::cumulative;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.lr = 0.1;
    ModelSpec spec = small_spec(8, 77);

    StrategyState incremental = make_strategy(cfg, spec);
    for (const auto& exp : stream) train_experience(incremental, cfg, exp);

    // From-scratch run on the concatenated union, same seed and schedule.
    Experience whole;
    whole.index = 0;
    std::vector<const Batch*> parts;
    for (const auto& exp : stream) parts.push_back(&exp.train);
    whole.train = concat_batches(parts);
    for (const auto& exp : stream)
        whole.class_set.insert(whole.class_set.end(), exp.class_set.begin(), exp.class_set.end());
    std::sort(whole.class_set.begin(), whole.class_set.end());

    StrategyState scratch = make_strategy(cfg, spec);
    train_experience(scratch, cfg, whole);

    CHECK(incremental.params == scratch.params);  // bitwise
}

TEST_CASE("training is deterministic per seed") {
    auto stream = blob_stream(3, 30, 5);
    StrategyConfig cfg;
    cfg.name = StrategyKind::replay;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr = 0.05;
    cfg.memory_size = 50;

    auto run = [&](std::uint64_t seed) {
        StrategyState state = make_strategy(cfg, small_spec(6, seed));
        for (const auto& exp : stream) train_experience(state, cfg, exp);
        return state;
    };
    StrategyState a = run(9);
    StrategyState b = run(9);
    StrategyState c = run(10);
    CHECK(a.params == b.params);
    CHECK(a.buffer.items.size() == b.buffer.items.size());
    CHECK(a.params != c.params);
}

TEST_CASE("hooks fire in order, once per phase") {
    auto stream = blob_stream(2, 20, 3);
    StrategyConfig cfg;
    cfg.name = StrategyKind::naive;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr = 0.05;
    StrategyState state = make_strategy(cfg, small_spec(4, 6));

    std::vector<HookEvent> events;
    std::vector<HookFn> hooks{[&](const HookEvent& ev) { events.push_back(ev); }};
    for (const auto& exp : stream) train_experience(state, cfg, exp, hooks);

    // per experience: 1 before + epochs after_epoch + 1 after
    REQUIRE(events.size() == 2 * (1 + cfg.epochs + 1));
    std::size_t idx = 0;
    for (std::size_t e = 0; e < 2; ++e) {
        CHECK(events[idx].kind == HookEvent::Kind::before_experience);
        CHECK(events[idx].experience_index == stream[e].index);
        ++idx;
        for (std::size_t p = 0; p < cfg.epochs; ++p, ++idx) {
            CHECK(events[idx].kind == HookEvent::Kind::after_epoch);
            CHECK(events[idx].epoch == p);
        }
        CHECK(events[idx].kind == HookEvent::Kind::after_experience);
        ++idx;
    }
}

TEST_CASE("empty experiences are rejected") {
    StrategyConfig cfg;
    cfg.name = StrategyKind::naive;
    StrategyState state = make_strategy(cfg, small_spec(4, 1));
    Experience exp;
    exp.index = 0;
    exp.class_set = {0};
    CHECK_THROWS_AS(train_experience(state, cfg, exp), EmptyExperience);
}

TEST_CASE("rebuild_strategy_memory reproduces the trained buffer") {
    auto stream = blob_stream(3, 40, 13);
    StrategyConfig cfg;
    cfg.name = StrategyKind::replay;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    cfg.memory_size = 100;
    ModelSpec spec = small_spec(6, 55);

    StrategyState trained = make_strategy(cfg, spec);
    for (const auto& exp : stream) train_experience(trained, cfg, exp);

    StrategyState rebuilt = make_strategy(cfg, spec);
    for (const auto& exp : stream) rebuild_strategy_memory(rebuilt, cfg, exp);

    REQUIRE(rebuilt.buffer.items.size() == trained.buffer.items.size());
    for (std::size_t i = 0; i < rebuilt.buffer.items.size(); ++i) {
        CHECK(rebuilt.buffer.items[i].label == trained.buffer.items[i].label);
        CHECK(rebuilt.buffer.items[i].features == trained.buffer.items[i].features);
    }
    CHECK(rebuilt.seen_count == trained.seen_count);
    CHECK(rebuilt.experiences_trained == trained.experiences_trained);
}
