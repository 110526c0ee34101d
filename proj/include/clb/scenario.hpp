#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clb/nn.hpp"

namespace clb {

struct DatasetManifest {
    std::string name;
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    std::string train_path;
    std::string test_path;
    std::string format = "csv";
};

/// One unit of the non-stationary stream: a disjoint class set with its
/// train patterns and test split.
struct Experience {
    std::size_t index = 0;
    std::vector<std::int32_t> class_set;  // sorted
    Batch train;
    Batch test;
};

enum class TestProtocol { full_test, accumulating_test };

TestProtocol protocol_from_string(const std::string& s);
std::string to_string(TestProtocol p);

struct Scenario {
    std::vector<Experience> experiences;
    TestProtocol protocol = TestProtocol::full_test;
    std::uint64_t seed = 0;
};

// Headerless CSV, rows "label,f1,...,fF". Throws ParseError with the line
// number on malformed rows, LabelError when a label >= num_classes.
Batch parse_csv(const std::string& text, std::size_t feature_dim, std::size_t num_classes);
std::pair<Batch, Batch> ingest_csv(const DatasetManifest& manifest);

DatasetManifest manifest_from_json_text(const std::string& text);

// Splits (train, test) into a class-incremental stream: a seed-determined
// class permutation assigns `first_size` classes to experience 0 and
// `rest_size` to each later one. Classes beyond first_size +
// (n_experiences-1)*rest_size are dropped with a warning on stderr.
Scenario build_nc_scenario(const Batch& train, const Batch& test, std::size_t num_classes,
                           std::size_t first_size, std::size_t rest_size, std::size_t n_experiences,
                           std::uint64_t seed, TestProtocol protocol = TestProtocol::full_test);

// Gaussian class blobs around seed-determined centers; desk-scale synthetic
// classification data.
std::pair<Batch, Batch> synth_blobs(std::size_t num_classes, std::size_t feature_dim,
                                    std::size_t per_class_train, std::size_t per_class_test,
                                    double spread, std::uint64_t seed);

// The evaluation stream after training step `upto`: concatenated test splits
// 0..upto under accumulating_test, all experiences under full_test.
Batch test_stream(const Scenario& scenario, std::size_t upto);

Batch concat_batches(const std::vector<const Batch*>& parts);

// Inverse of parse_csv; floats printed with enough digits to round-trip.
std::string batch_to_csv(const Batch& batch);

}  // namespace clb
