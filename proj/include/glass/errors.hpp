#pragma once

#include <stdexcept>
#include <string>

namespace glass {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class AccumulationError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };

class SchemaError : public Error {
public:
    explicit SchemaError(std::string column)
      : Error("missing column: " + column), column_(std::move(column))
    { }
    const std::string& column() const { return column_; }
private:
    std::string column_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row)
    { }
    std::size_t row() const { return row_; }
private:
    std::size_t row_;
};

class FormatError : public Error {
public:
    FormatError(std::size_t offset, const std::string& what)
      : Error("offset " + std::to_string(offset) + ": " + what), offset_(offset)
    { }
    std::size_t offset() const { return offset_; }
private:
    std::size_t offset_;
};

} // namespace glass
