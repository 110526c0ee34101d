#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "clb/errors.hpp"
#include "clb/nn.hpp"
#include "clb/rng.hpp"
#include "clb/scenario.hpp"
#include "clb/strategies.hpp"

using namespace clb;

TEST_CASE("parse_csv reads headerless rows") {
    Batch b = parse_csv("0,1.0,2.0\n1,0.5,0.5\n0,0.0,1.0\n", 2, 2);
    REQUIRE(b.size() == 3);
    CHECK(b.labels == std::vector<std::int32_t>{0, 1, 0});
    CHECK(b.features.at(0, 1) == 2.0f);
    CHECK(b.features.at(2, 0) == 0.0f);

    // CRLF and missing trailing newline both parse.
    Batch crlf = parse_csv("1,3.5,-2\r\n0,1,1", 2, 2);
    CHECK(crlf.size() == 2);
    CHECK(crlf.features.at(0, 1) == -2.0f);
}

TEST_CASE("parse_csv reports the offending line") {
    CHECK_THROWS_AS(parse_csv("", 2, 2), ParseError);
    CHECK_THROWS_AS(parse_csv("\n\n", 2, 2), ParseError);

    try {
        parse_csv("0,1.0,2.0\n1,oops,0.5\n", 2, 2);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }

    try {
        parse_csv("0,1.0,2.0\n2,0.5,0.5\n", 2, 2);
        FAIL("expected LabelError");
    } catch (const LabelError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    // wrong arity
    CHECK_THROWS_AS(parse_csv("0,1.0\n", 2, 2), ParseError);
    CHECK_THROWS_AS(parse_csv("0,1.0,2.0,3.0\n", 2, 2), ParseError);
}

TEST_CASE("ingest_csv goes through manifests") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "clb-scenario-test";
    fs::create_directories(dir);
    {
        std::ofstream train(dir / "train.csv");
        train << "0,1.0,2.0\n1,0.5,0.5\n";
        std::ofstream test(dir / "test.csv");
        test << "1,0.25,0.75\n";
    }
    DatasetManifest m;
    m.name = "tiny";
    m.feature_dim = 2;
    m.num_classes = 2;
    m.train_path = (dir / "train.csv").string();
    m.test_path = (dir / "test.csv").string();

    auto [train, test] = ingest_csv(m);
    CHECK(train.size() == 2);
    CHECK(test.size() == 1);

    m.test_path = (dir / "missing.csv").string();
    CHECK_THROWS_AS(ingest_csv(m), ParseError);

    const std::string manifest_json =
        "{\"name\":\"tiny\",\"feature_dim\":2,\"num_classes\":2,\"train_path\":\"t\","
        "\"test_path\":\"s\",\"format\":\"csv\"}";
    DatasetManifest parsed = manifest_from_json_text(manifest_json);
    CHECK(parsed.feature_dim == 2);
    CHECK_THROWS_AS(manifest_from_json_text("{not json"), ParseError);
    fs::remove_all(dir);
}

namespace {

// One labeled pattern per (class, copy) pair; features encode identity so
// routing can be checked exactly.
Batch patterns_for_classes(std::size_t num_classes, std::size_t per_class) {
    Batch b;
    b.features = Matrix(num_classes * per_class, 2);
    std::size_t row = 0;
    for (std::size_t c = 0; c < num_classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            b.features.at(row, 0) = static_cast<float>(c);
            b.features.at(row, 1) = static_cast<float>(i);
            b.labels.push_back(static_cast<std::int32_t>(c));
        }
    return b;
}

}  // namespace

TEST_CASE("nc splitter produces the configured class counts") {
    Batch train = patterns_for_classes(46, 3);
    Batch test = patterns_for_classes(46, 1);

    Scenario s = build_nc_scenario(train, test, 46, 10, 4, 10, 7);
    REQUIRE(s.experiences.size() == 10);
    CHECK(s.experiences[0].class_set.size() == 10);
    for (std::size_t e = 1; e < 10; ++e) CHECK(s.experiences[e].class_set.size() == 4);

    // pairwise disjoint, all classes covered
    std::set<std::int32_t> seen;
    for (const auto& exp : s.experiences)
        for (std::int32_t c : exp.class_set) CHECK(seen.insert(c).second);
    CHECK(seen.size() == 46);

    // every pattern routed to the experience owning its class
    std::size_t total_train = 0;
    for (const auto& exp : s.experiences) {
        total_train += exp.train.size();
        for (std::int32_t label : exp.train.labels)
            CHECK(std::binary_search(exp.class_set.begin(), exp.class_set.end(), label));
        CHECK(exp.test.size() == exp.class_set.size());  // one test pattern per class
    }
    CHECK(total_train == train.size());
}

TEST_CASE("nc splitter rejects insufficient classes") {
    Batch train = patterns_for_classes(45, 1);
    Batch test = patterns_for_classes(45, 1);
    CHECK_THROWS_AS(build_nc_scenario(train, test, 45, 10, 4, 10, 7), InsufficientClasses);
}

TEST_CASE("uniform 2-class split over 20 classes") {
    Batch train = patterns_for_classes(20, 2);
    Batch test = patterns_for_classes(20, 1);
    Scenario s = build_nc_scenario(train, test, 20, 2, 2, 10, 3);
    REQUIRE(s.experiences.size() == 10);
    for (const auto& exp : s.experiences) CHECK(exp.class_set.size() == 2);
}

TEST_CASE("nc splitter is seed stable") {
    Batch train = patterns_for_classes(12, 2);
    Batch test = patterns_for_classes(12, 1);
    Scenario a = build_nc_scenario(train, test, 12, 4, 2, 5, 11);
    Scenario b = build_nc_scenario(train, test, 12, 4, 2, 5, 11);
    Scenario c = build_nc_scenario(train, test, 12, 4, 2, 5, 12);

    auto sets = [](const Scenario& s) {
        std::vector<std::vector<std::int32_t>> out;
        for (const auto& e : s.experiences) out.push_back(e.class_set);
        return out;
    };
    CHECK(sets(a) == sets(b));
    CHECK(sets(a) != sets(c));
}

TEST_CASE("synth_blobs shapes and determinism") {
    auto [train, test] = synth_blobs(4, 3, 100, 10, 0.5, 99);
    CHECK(train.size() == 400);
    CHECK(test.size() == 40);
    CHECK(train.features.cols == 3);

    auto [train2, test2] = synth_blobs(4, 3, 100, 10, 0.5, 99);
    CHECK(train.features.data == train2.features.data);
    CHECK(test.labels == test2.labels);

    CHECK_THROWS_AS(synth_blobs(4, 3, 100, 10, 0.0, 99), ConfigError);
    CHECK_THROWS_AS(synth_blobs(0, 3, 100, 10, 0.5, 99), ConfigError);
}

TEST_CASE("near-zero spread blobs are linearly separable") {
    auto [train, test] = synth_blobs(3, 4, 60, 20, 1e-4, 5);
    ModelSpec spec{4, {}, 3, Activation::relu, 1};
    StrategyConfig cfg;
    cfg.name = StrategyKind::naive;
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.lr = 0.5;
    StrategyState state = make_strategy(cfg, spec);
    Experience exp;
    exp.index = 0;
    exp.class_set = {0, 1, 2};
    exp.train = train;
    exp.test = test;
    train_experience(state, cfg, exp);

    auto top1 = predict_topk(spec, state.params, test, 1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (top1[i][0] == test.labels[i]) ++hits;
    CHECK(hits == test.size());
}

TEST_CASE("test_stream respects the protocol") {
    Batch train = patterns_for_classes(6, 2);
    Batch test = patterns_for_classes(6, 3);
    Scenario acc = build_nc_scenario(train, test, 6, 2, 2, 3, 1, TestProtocol::accumulating_test);

    Batch first = test_stream(acc, 0);
    CHECK(first.size() == acc.experiences[0].test.size());
    CHECK(first.labels == acc.experiences[0].test.labels);

    Batch upto1 = test_stream(acc, 1);
    CHECK(upto1.size() == acc.experiences[0].test.size() + acc.experiences[1].test.size());

    Scenario full = build_nc_scenario(train, test, 6, 2, 2, 3, 1, TestProtocol::full_test);
    Batch f0 = test_stream(full, 0);
    Batch f2 = test_stream(full, 2);
    CHECK(f0.labels == f2.labels);
    CHECK(f0.size() == test.size());

    // accumulating over everything equals full_test up to ordering
    Batch all_acc = test_stream(acc, 2);
    std::multiset<std::int32_t> a(all_acc.labels.begin(), all_acc.labels.end());
    std::multiset<std::int32_t> b(f0.labels.begin(), f0.labels.end());
    CHECK(a == b);

    CHECK_THROWS_AS(test_stream(acc, 3), RangeError);
}

TEST_CASE("csv writer round-trips batches") {
    Rng rng(8);
    Batch b;
    b.features = Matrix(20, 3);
    for (auto& v : b.features.data) v = static_cast<float>(rng.gaussian() * 1e3);
    for (std::size_t i = 0; i < 20; ++i)
        b.labels.push_back(static_cast<std::int32_t>(rng.below(4)));

    Batch back = parse_csv(batch_to_csv(b), 3, 4);
    CHECK(back.labels == b.labels);
    CHECK(back.features.data == b.features.data);
}
