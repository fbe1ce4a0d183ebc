#pragma once

#include <stdexcept>
#include <string>

namespace mcatlas {

// Base of every error the library raises. Subclasses carry the category so
// the CLI can map failures onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Numerical failures
// ---------------------------------------------------------------------------

class NumericalError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf was produced by a differentiable op.
class NonFiniteValue : public NumericalError {
public:
    NonFiniteValue(std::string op, std::size_t node)
        : NumericalError("non-finite value produced by '" + op + "' at tape node " +
                         std::to_string(node)),
          op_(std::move(op)), node_(node) {}

    [[nodiscard]] const std::string& op() const noexcept { return op_; }
    [[nodiscard]] std::size_t node() const noexcept { return node_; }

private:
    std::string op_;
    std::size_t node_;
};

class NonFiniteGradient : public NumericalError {
public:
    explicit NonFiniteGradient(std::string parameter)
        : NumericalError("non-finite gradient for parameter '" + parameter + "'"),
          parameter_(std::move(parameter)) {}

    [[nodiscard]] const std::string& parameter() const noexcept { return parameter_; }

private:
    std::string parameter_;
};

class InvalidTape : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// ---------------------------------------------------------------------------
// Argument / shape errors
// ---------------------------------------------------------------------------

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class EmptyInput : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class EmptyRequest : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class ShapeMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class WindowTooSmall : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class DegenerateAtlas : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Data errors
// ---------------------------------------------------------------------------

class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed mesh/cloud file. `where` is "line N" for text formats and
/// "offset N" for binary payloads.
class ParseError : public DataError {
public:
    ParseError(const std::string& file, const std::string& where, const std::string& what)
        : DataError(file + ": " + where + ": " + what) {}
};

class LabelMismatch : public DataError {
public:
    using DataError::DataError;
};

class DegenerateMesh : public DataError {
public:
    using DataError::DataError;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace mcatlas
