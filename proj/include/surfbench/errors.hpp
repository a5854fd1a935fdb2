// Error types shared across the library. Every failure mode the public API
// documents maps to one of these, so callers (and the CLI exit-code policy)
// can distinguish bad inputs from numerical trouble at runtime.
#pragma once

#include <stdexcept>
#include <string>

namespace surfbench {

// Broad failure class, used by the CLI to pick an exit code:
// validation failures exit 2, runtime/numerical failures exit 3.
enum class ErrorKind { validation, runtime };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg)
        : Error(ErrorKind::validation, msg) {}
};

class RuntimeError : public Error {
public:
    explicit RuntimeError(const std::string& msg)
        : Error(ErrorKind::runtime, msg) {}
};

// ---- validation-class errors -------------------------------------------

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public ValidationError {
public:
    ParseError(long line, const std::string& reason)
        : ValidationError("parse error at line " + std::to_string(line) + ": " + reason),
          line_(line) {}
    explicit ParseError(const std::string& reason)
        : ValidationError("parse error: " + reason), line_(-1) {}
    long line() const { return line_; }

private:
    long line_;
};

struct NonMonotonicTime : ValidationError {
    using ValidationError::ValidationError;
};

struct InvalidCycle : ValidationError {
    using ValidationError::ValidationError;
};

struct DegenerateChannel : ValidationError {
    using ValidationError::ValidationError;
};

struct InsufficientEpisodes : ValidationError {
    using ValidationError::ValidationError;
};

struct IncompatibleModel : ValidationError {
    using ValidationError::ValidationError;
};

// ---- runtime-class errors ----------------------------------------------

struct Unreachable : RuntimeError {
    using RuntimeError::RuntimeError;
};

struct NumericalBlowup : RuntimeError {
    using RuntimeError::RuntimeError;
};

struct NonFiniteLoss : RuntimeError {
    using RuntimeError::RuntimeError;
};

struct NoEventsFound : RuntimeError {
    using RuntimeError::RuntimeError;
};

struct AlignmentFailed : RuntimeError {
    using RuntimeError::RuntimeError;
};

}  // namespace surfbench
