#pragma once

#include <stdexcept>
#include <string>

namespace vithd {

/// Base of all library errors. `exit_code()` follows the CLI contract:
/// 1 for input/validation problems, 2 for runtime failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 2; }
};

class ValidationError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

class InvalidPolygonError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InvalidBoxError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DimensionMismatchError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A sample listed in a split has no prediction file.
class MissingPredictionError : public ValidationError {
public:
    MissingPredictionError(const std::string& sample_id, const std::string& what)
        : ValidationError(what), sample_id_(sample_id) {}
    const std::string& sample_id() const noexcept { return sample_id_; }

private:
    std::string sample_id_;
};

class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what)
        : Error(what + ": " + path), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Non-finite activation or parameter.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace vithd
