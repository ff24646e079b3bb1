#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace driftscope {

// Root of every error the library throws. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

// Raised by cosine similarity on an all-zero operand.
class DegenerateInputError : public DomainError {
public:
    using DomainError::DomainError;
};

class FormatError : public Error {
public:
    using Error::Error;
};

// A trace file that ends early or carries an impossible length field.
class CorruptionError : public FormatError {
public:
    CorruptionError(const std::string& what, std::size_t offset, std::size_t record_index)
        : FormatError(what + " (byte offset " + std::to_string(offset) + ", record " +
                      std::to_string(record_index) + ")"),
          offset_(offset),
          record_index_(record_index) {}

    std::size_t offset() const noexcept { return offset_; }
    std::size_t record_index() const noexcept { return record_index_; }

private:
    std::size_t offset_;
    std::size_t record_index_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class EmptyGenerationError : public Error {
public:
    using Error::Error;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace driftscope
