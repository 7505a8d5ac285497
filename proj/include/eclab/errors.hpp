#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eclab {

/// Argument outside the mathematical domain of an operation (scalar >= order,
/// modulus mismatch, non-invertible element, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed serialized input: bad prefix byte, truncated file, bad hex.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Well-formed point encoding whose x-coordinate is not on the curve.
class DecodeError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Format error tied to one record of a dataset.
class RecordFormatError : public FormatError {
public:
    RecordFormatError(std::size_t index, const std::string& what)
        : FormatError("record " + std::to_string(index) + ": " + what), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// NaN/Inf detected during training. `layer` is -1 when no layer applies
/// (embeddings, output head, optimizer).
class NumericError : public std::runtime_error {
public:
    NumericError(int layer, const std::string& what)
        : std::runtime_error(layer >= 0 ? what + " (layer " + std::to_string(layer) + ")" : what),
          layer_(layer) {}

    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace eclab
