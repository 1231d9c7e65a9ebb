#pragma once

#include <stdexcept>
#include <string>

namespace gem {

// Root of every error the library raises. The CLI maps these to a nonzero exit
// with a "<kind>: <message>" line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& m) : Error("validation_error", m) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& m) : Error("parse_error", m) {}
};
struct IncompatibilityError : Error {
    explicit IncompatibilityError(const std::string& m) : Error("incompatibility_error", m) {}
};
struct StratificationError : Error {
    explicit StratificationError(const std::string& m) : Error("stratification_error", m) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("shape_error", m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io_error", m) {}
};

}  // namespace gem
