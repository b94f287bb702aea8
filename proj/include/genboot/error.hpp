#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace genboot {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RankDeficientDesign : public Error {
public:
    RankDeficientDesign(std::string column)
        : Error("rank-deficient design: column '" + column + "' is linearly dependent on the others"),
          column_(std::move(column)) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

class NegativeWeight : public Error {
public:
    NegativeWeight(std::size_t row, double value)
        : Error("negative or non-finite weight " + std::to_string(value) + " at row " + std::to_string(row)),
          row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Replicate resample left the weighted design unusable; skipped and counted.
class ReplicateDegenerate : public Error {
public:
    using Error::Error;
};

class TooManyFailures : public Error {
public:
    using Error::Error;
};

class DegenerateTreatmentArm : public Error {
public:
    using Error::Error;
};

class MissingColumn : public Error {
public:
    MissingColumn(std::string column)
        : Error("missing required column '" + column + "'"), column_(std::move(column)) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

class UnparseableRow : public Error {
public:
    UnparseableRow(std::size_t row, std::string field, const std::string& detail)
        : Error("unparseable row " + std::to_string(row) + ", field '" + field + "': " + detail),
          row_(row), field_(std::move(field)) {}
    std::size_t row() const noexcept { return row_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t row_;
    std::string field_;
};

class EmptyAfterFilter : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace genboot
