#pragma once

#include <stdexcept>
#include <string>

namespace clb {

// Base for all library errors. `code` is the stable machine-readable
// identifier used in API error bodies; `field` names the offending config
// field path when one exists.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail, std::string field = "")
        : std::runtime_error(detail), code_(std::move(code)), field_(std::move(field)) {}

    const std::string& code() const { return code_; }
    const std::string& field() const { return field_; }

private:
    std::string code_;
    std::string field_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& detail) : Error("DimensionError", detail) {}
};

struct LabelError : Error {
    explicit LabelError(const std::string& detail) : Error("LabelError", detail) {}
};

struct RangeError : Error {
    explicit RangeError(const std::string& detail) : Error("RangeError", detail) {}
};

// Carries the 1-based line number of the offending row, 0 if not line-specific.
class ParseError : public Error {
public:
    ParseError(const std::string& detail, std::size_t line = 0)
        : Error("ParseError", detail), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct ConfigError : Error {
    ConfigError(const std::string& reason, const std::string& detail, std::string field = "")
        : Error(reason, detail, std::move(field)) {}
};

struct InsufficientClasses : Error {
    explicit InsufficientClasses(const std::string& detail) : Error("InsufficientClasses", detail) {}
};

struct EmptyExperience : Error {
    explicit EmptyExperience(const std::string& detail) : Error("EmptyExperience", detail) {}
};

struct EmptyBatch : Error {
    explicit EmptyBatch(const std::string& detail) : Error("EmptyBatch", detail) {}
};

struct WindowError : Error {
    explicit WindowError(const std::string& detail) : Error("WindowError", detail) {}
};

struct BinError : Error {
    explicit BinError(const std::string& detail) : Error("BinError", detail) {}
};

struct DataError : Error {
    explicit DataError(const std::string& detail) : Error("DataError", detail) {}
};

struct NotFound : Error {
    explicit NotFound(const std::string& detail, std::string code = "NotFound")
        : Error(std::move(code), detail) {}
};

struct StorageError : Error {
    explicit StorageError(const std::string& detail) : Error("StorageError", detail) {}
};

struct KeyError : Error {
    explicit KeyError(const std::string& detail) : Error("KeyError", detail) {}
};

struct JobStateError : Error {
    explicit JobStateError(const std::string& detail) : Error("JobStateError", detail) {}
};

struct AggregateError : Error {
    explicit AggregateError(const std::string& detail) : Error("AggregateError", detail) {}
};

struct ClassOverlap : Error {
    explicit ClassOverlap(const std::string& detail) : Error("ClassOverlap", detail) {}
};

struct NothingToTrain : Error {
    explicit NothingToTrain(const std::string& detail) : Error("NothingToTrain", detail) {}
};

struct MonitoringDisabled : Error {
    explicit MonitoringDisabled(const std::string& detail) : Error("MonitoringDisabled", detail) {}
};

struct Duplicate : Error {
    explicit Duplicate(const std::string& detail) : Error("Duplicate", detail) {}
};

}  // namespace clb
