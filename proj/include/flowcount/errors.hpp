#pragma once

#include <stdexcept>
#include <string>

namespace flowcount {

/// Invalid argument, shape mismatch or out-of-range index.
class DomainError : public std::invalid_argument {
public:
    explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

/// A flow field was passed in the wrong (incoming/outgoing) representation.
class RepresentationError : public DomainError {
public:
    explicit RepresentationError(const std::string& what) : DomainError(what) {}
};

/// NaN or infinity surfaced by a computation.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file (annotation, manifest, world, checkpoint, config).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Checkpoint whose stored configuration does not match what the caller expects.
class IncompatibleCheckpoint : public std::runtime_error {
public:
    IncompatibleCheckpoint(const std::string& field, const std::string& what)
        : std::runtime_error(what), field_(field) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace flowcount
