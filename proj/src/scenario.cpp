#include "clb/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "clb/errors.hpp"
#include "clb/rng.hpp"

#include "json.hpp"

namespace clb {

TestProtocol protocol_from_string(const std::string& s) {
    if (s == "full_test") return TestProtocol::full_test;
    if (s == "accumulating_test") return TestProtocol::accumulating_test;
    throw ConfigError("UnknownProtocol", "unknown test protocol '" + s + "'");
}

std::string to_string(TestProtocol p) {
    return p == TestProtocol::full_test ? "full_test" : "accumulating_test";
}

namespace {

// One CSV row: "label,f1,...,fF". `line_no` is 1-based for diagnostics.
void parse_row(const std::string& line, std::size_t line_no, std::size_t feature_dim,
               std::size_t num_classes, std::vector<float>& features_out, std::int32_t& label_out) {
    const char* p = line.data();
    const char* end = p + line.size();

    auto res = std::from_chars(p, end, label_out);
    if (res.ec != std::errc())
        throw ParseError("line " + std::to_string(line_no) + ": bad label", line_no);
    if (label_out < 0 || static_cast<std::size_t>(label_out) >= num_classes)
        throw LabelError("line " + std::to_string(line_no) + ": label " + std::to_string(label_out) +
                         " outside [0, " + std::to_string(num_classes) + ")");
    p = res.ptr;

    features_out.clear();
    for (std::size_t f = 0; f < feature_dim; ++f) {
        if (p >= end || *p != ',')
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(feature_dim) + " features, found " + std::to_string(f),
                             line_no);
        ++p;
        float v;
        auto fres = std::from_chars(p, end, v);
        if (fres.ec != std::errc())
            throw ParseError("line " + std::to_string(line_no) + ": bad feature value", line_no);
        p = fres.ptr;
        features_out.push_back(v);
    }
    if (p != end)
        throw ParseError("line " + std::to_string(line_no) + ": trailing characters", line_no);
}

}  // namespace

Batch parse_csv(const std::string& text, std::size_t feature_dim, std::size_t num_classes) {
    std::vector<float> features;
    std::vector<std::int32_t> labels;
    std::vector<float> row;
    std::int32_t label;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++line_no;
        if (line.empty()) continue;
        parse_row(line, line_no, feature_dim, num_classes, row, label);
        features.insert(features.end(), row.begin(), row.end());
        labels.push_back(label);
    }
    if (labels.empty()) throw ParseError("EmptyDataset: no data rows");

    Batch batch;
    batch.features.rows = labels.size();
    batch.features.cols = feature_dim;
    batch.features.data = std::move(features);
    batch.labels = std::move(labels);
    return batch;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::pair<Batch, Batch> ingest_csv(const DatasetManifest& manifest) {
    if (manifest.format != "csv")
        throw ConfigError("UnknownFormat", "unsupported dataset format '" + manifest.format + "'");
    if (manifest.num_classes < 2)
        throw ConfigError("InvalidManifest", "num_classes must be >= 2", "num_classes");
    Batch train = parse_csv(read_file(manifest.train_path), manifest.feature_dim, manifest.num_classes);
    Batch test = parse_csv(read_file(manifest.test_path), manifest.feature_dim, manifest.num_classes);
    return {std::move(train), std::move(test)};
}

DatasetManifest manifest_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ParseError("manifest is not valid JSON");
    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.feature_dim = j.at("feature_dim").get<std::size_t>();
        m.num_classes = j.at("num_classes").get<std::size_t>();
        m.train_path = j.at("train_path").get<std::string>();
        m.test_path = j.at("test_path").get<std::string>();
        m.format = j.at("format").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest field error: ") + e.what());
    }
    return m;
}

namespace {

Batch select_rows(const Batch& src, const std::vector<std::size_t>& rows) {
    Batch out;
    out.features.rows = rows.size();
    out.features.cols = src.features.cols;
    out.features.data.reserve(rows.size() * src.features.cols);
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) {
        const float* row = src.features.row(r);
        out.features.data.insert(out.features.data.end(), row, row + src.features.cols);
        out.labels.push_back(src.labels[r]);
    }
    return out;
}

}  // namespace

Scenario build_nc_scenario(const Batch& train, const Batch& test, std::size_t num_classes,
                           std::size_t first_size, std::size_t rest_size, std::size_t n_experiences,
                           std::uint64_t seed, TestProtocol protocol) {
    if (n_experiences < 1) throw ConfigError("InvalidScenario", "n_experiences must be >= 1");
    if (first_size < 1 || (n_experiences > 1 && rest_size < 1))
        throw ConfigError("InvalidScenario", "experience class counts must be >= 1");
    const std::size_t needed = first_size + (n_experiences - 1) * rest_size;
    if (needed > num_classes)
        throw InsufficientClasses("need " + std::to_string(needed) + " classes, dataset has " +
                                  std::to_string(num_classes));
    if (needed < num_classes)
        std::cerr << "warning: " << (num_classes - needed)
                  << " classes are not assigned to any experience and will be dropped\n";

    Rng rng(mix_seed(seed, 0x5C3Aull));
    std::vector<std::size_t> perm = rng.permutation(num_classes);

    // class -> experience, or -1 for dropped classes
    std::vector<std::int32_t> owner(num_classes, -1);
    std::size_t cursor = 0;
    Scenario scenario;
    scenario.protocol = protocol;
    scenario.seed = seed;
    scenario.experiences.resize(n_experiences);
    for (std::size_t e = 0; e < n_experiences; ++e) {
        const std::size_t take = e == 0 ? first_size : rest_size;
        auto& exp = scenario.experiences[e];
        exp.index = e;
        for (std::size_t t = 0; t < take; ++t) {
            const std::size_t cls = perm[cursor++];
            owner[cls] = static_cast<std::int32_t>(e);
            exp.class_set.push_back(static_cast<std::int32_t>(cls));
        }
        std::sort(exp.class_set.begin(), exp.class_set.end());
    }

    std::vector<std::vector<std::size_t>> train_rows(n_experiences), test_rows(n_experiences);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const std::int32_t e = owner[static_cast<std::size_t>(train.labels[i])];
        if (e >= 0) train_rows[static_cast<std::size_t>(e)].push_back(i);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
        const std::int32_t e = owner[static_cast<std::size_t>(test.labels[i])];
        if (e >= 0) test_rows[static_cast<std::size_t>(e)].push_back(i);
    }
    for (std::size_t e = 0; e < n_experiences; ++e) {
        scenario.experiences[e].train = select_rows(train, train_rows[e]);
        scenario.experiences[e].test = select_rows(test, test_rows[e]);
    }
    return scenario;
}

std::pair<Batch, Batch> synth_blobs(std::size_t num_classes, std::size_t feature_dim,
                                    std::size_t per_class_train, std::size_t per_class_test,
                                    double spread, std::uint64_t seed) {
    if (num_classes < 1 || feature_dim < 1 || per_class_train < 1 || per_class_test < 1)
        throw ConfigError("InvalidScenario", "blob counts must be >= 1");
    if (spread <= 0.0) throw ConfigError("InvalidScenario", "spread must be > 0");

    Rng center_rng(mix_seed(seed, 0xB70B5ull));
    std::vector<std::vector<double>> centers(num_classes, std::vector<double>(feature_dim));
    for (auto& center : centers)
        for (auto& v : center) v = center_rng.gaussian();

    auto make = [&](std::size_t per_class, std::uint64_t salt) {
        Batch batch;
        batch.features.rows = num_classes * per_class;
        batch.features.cols = feature_dim;
        batch.features.data.reserve(batch.features.rows * feature_dim);
        batch.labels.reserve(batch.features.rows);
        Rng rng(mix_seed(seed, salt));
        for (std::size_t c = 0; c < num_classes; ++c) {
            for (std::size_t i = 0; i < per_class; ++i) {
                for (std::size_t f = 0; f < feature_dim; ++f)
                    batch.features.data.push_back(
                        static_cast<float>(centers[c][f] + spread * rng.gaussian()));
                batch.labels.push_back(static_cast<std::int32_t>(c));
            }
        }
        return batch;
    };
    return {make(per_class_train, 0x7124ull), make(per_class_test, 0x7E57ull)};
}

Batch concat_batches(const std::vector<const Batch*>& parts) {
    Batch out;
    std::size_t rows = 0;
    std::size_t cols = 0;
    for (const Batch* b : parts) {
        if (b->empty()) continue;
        if (cols == 0) cols = b->features.cols;
        if (b->features.cols != cols) throw DimensionError("feature dims differ across batches");
        rows += b->size();
    }
    out.features.rows = rows;
    out.features.cols = cols;
    out.features.data.reserve(rows * cols);
    out.labels.reserve(rows);
    for (const Batch* b : parts) {
        out.features.data.insert(out.features.data.end(), b->features.data.begin(),
                                 b->features.data.end());
        out.labels.insert(out.labels.end(), b->labels.begin(), b->labels.end());
    }
    return out;
}

std::string batch_to_csv(const Batch& batch) {
    std::string out;
    char buf[40];
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out += std::to_string(batch.labels[i]);
        const float* row = batch.features.row(i);
        for (std::size_t f = 0; f < batch.features.cols; ++f) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row[f]));
            out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

Batch test_stream(const Scenario& scenario, std::size_t upto) {
    if (upto >= scenario.experiences.size())
        throw RangeError("experience index " + std::to_string(upto) + " out of range");
    std::vector<const Batch*> parts;
    const std::size_t last =
        scenario.protocol == TestProtocol::full_test ? scenario.experiences.size() - 1 : upto;
    for (std::size_t e = 0; e <= last; ++e) parts.push_back(&scenario.experiences[e].test);
    return concat_batches(parts);
}

}  // namespace clb
