#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pano3d {

/// Precondition or argument-range violation.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input file. Carries the offending file and 1-based line (0 when not line-oriented).
class ParseError : public std::runtime_error {
public:
    ParseError(std::string file, std::size_t line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
          file_(std::move(file)),
          line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

/// Required per-clip metadata (caption etc.) is absent or empty.
class MissingMetadataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Workspace is missing an input produced by an earlier pipeline stage.
class WorkspaceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optimization produced a non-finite loss.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Metric requested for a record where it is not defined.
class UndefinedMetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pano3d
