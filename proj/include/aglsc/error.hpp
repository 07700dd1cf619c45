#pragma once

#include <stdexcept>
#include <string>

namespace aglsc {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DatasetError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// Raised by the optimizer when a gradient is NaN/Inf.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& param)
        : NumericError("training diverged: non-finite gradient in '" + param + "'"), param_(param) {}

    const std::string& param() const noexcept { return param_; }

private:
    std::string param_;
};

class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_shape(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw ShapeError(std::string(op) + ": dimension mismatch (" + detail + ")");
}

}  // namespace detail
}  // namespace aglsc
