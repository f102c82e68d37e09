#pragma once

#include <stdexcept>
#include <string>

namespace normdae {

// Error categories map 1:1 onto CLI exit codes (see tools/normdae.cpp):
// config -> 2, data -> 3, numeric -> 4.
enum class ErrorKind { Config, Data, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

// Bad configuration values, unknown keys, bound violations.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(ErrorKind::Config, msg) {}
};

// Malformed or inconsistent inputs: files, shapes, joins, ids.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

// Tensor shape mismatches; message carries both shapes.
class DimensionError : public DataError {
public:
    explicit DimensionError(const std::string& msg) : DataError(msg) {}
};

// Degenerate statistical input (zero-norm vector, zero variance, all ties).
class DegenerateInputError : public DataError {
public:
    explicit DegenerateInputError(const std::string& msg) : DataError(msg) {}
};

// NaN/Inf in numeric kernels, divergence, failed convergence.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

class CollinearityError : public NumericError {
public:
    explicit CollinearityError(const std::string& msg) : NumericError(msg) {}
};

class ConvergenceError : public NumericError {
public:
    explicit ConvergenceError(const std::string& msg) : NumericError(msg) {}
};

class SeparationError : public NumericError {
public:
    explicit SeparationError(const std::string& msg) : NumericError(msg) {}
};

} // namespace normdae
