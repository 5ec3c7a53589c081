#pragma once

#include <stdexcept>
#include <string>

namespace agcl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes or dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A scalar or count argument is outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Input values violate a domain requirement (non-finite, empty patch, bad label).
class DomainError : public Error {
public:
    using Error::Error;
};

/// An iterative spectral routine did not converge.
class SpectralFailure : public Error {
public:
    SpectralFailure(std::size_t rows, std::size_t cols)
        : Error("SVD did not converge for " + std::to_string(rows) + "x" +
                std::to_string(cols) + " matrix"),
          rows(rows), cols(cols) {}
    std::size_t rows;
    std::size_t cols;
};

/// A vector that must be normalised has (near) zero length.
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// A distance metric is undefined for the given masks (one of them is empty).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. a forward trace used after its parameters changed.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Binary file could not be decoded. `offset` is the byte where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string &what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset(offset) {}
    std::size_t offset;
};

class TruncationError : public FormatError {
public:
    TruncationError(std::size_t expected, std::size_t actual)
        : FormatError("truncated file: expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(actual),
                      actual),
          expected(expected), actual(actual) {}
    std::size_t expected;
    std::size_t actual;
};

class ChecksumError : public FormatError {
public:
    ChecksumError(unsigned stored, unsigned computed, std::size_t offset)
        : FormatError("CRC mismatch: stored " + std::to_string(stored) + ", computed " +
                          std::to_string(computed),
                      offset) {}
};

class VersionError : public FormatError {
public:
    VersionError(unsigned found, unsigned supported, std::size_t offset)
        : FormatError("unsupported format version " + std::to_string(found) +
                          " (supported: " + std::to_string(supported) + ")",
                      offset) {}
};

/// Synthetic data generation could not satisfy its placement constraints.
class GenerationError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace agcl
