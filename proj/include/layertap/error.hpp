#pragma once

#include <stdexcept>
#include <string>

namespace layertap {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can report a single machine-readable error line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct DegenerateVectorError : Error {
    explicit DegenerateVectorError(const std::string& what) : Error("degenerate_vector", what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

struct NoValidTripletError : Error {
    explicit NoValidTripletError(const std::string& what) : Error("no_valid_triplet", what) {}
};

struct NoValidPairError : Error {
    explicit NoValidPairError(const std::string& what) : Error("no_valid_pair", what) {}
};

struct LabelError : Error {
    explicit LabelError(const std::string& what) : Error("label", what) {}
};

struct SpecError : Error {
    explicit SpecError(const std::string& what) : Error("net_spec", what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error("data", what) {}
};

struct MetricError : Error {
    explicit MetricError(const std::string& what) : Error("metric", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace layertap
