#pragma once

#include <stdexcept>
#include <string>

namespace fewshot {

// Process exit codes used by the CLI.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    data = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

// Bad arguments, shape mismatches, invalid plans.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ExitCode::usage, what) {}
};

// A requested mode is not supported by the inputs (e.g. zero-shot without a pretrained head).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::usage, what) {}
};

// Anything wrong with a file on disk.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

class FormatError : public DataError {
public:
    explicit FormatError(const std::string& what) : DataError(what) {}
};

class VersionError : public FormatError {
public:
    explicit VersionError(const std::string& what) : FormatError(what) {}
};

class CorruptionError : public DataError {
public:
    CorruptionError(const std::string& what, std::size_t offset);
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class ValidationError : public DataError {
public:
    explicit ValidationError(const std::string& what) : DataError(what) {}
};

class IoError : public DataError {
public:
    IoError(const std::string& what, const std::string& path);
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

// Non-finite values produced during computation.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

}  // namespace fewshot
