#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace predaqp {

enum class ErrorCode {
  kMissingColumn,
  kTypeParseFailure,
  kEmptyTable,
  kInvalidArgument,
  kDegenerateColumn,
  kUnknownCategory,
  kShapeMismatch,
  kNoForwardCache,
  kNonFiniteLoss,
  kSyntaxError,
  kUnknownColumn,
  kTypeMismatch,
  kUnsupportedQuery,
  kDnfBlowup,
  kSchemaMismatch,
  kUnansweredQuery,
  kVersionMismatch,
  kCorruptFile,
  kInvalidSpec,
  kConfigError,
  kIoError,
  kEmptyRange,
  kUndefinedRelativeError,
  kEmptyTruthGroups,
};

const char* to_string(ErrorCode code);

/// Base exception for every failure surfaced by the library. The code is the
/// machine-checkable part; the message carries human context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Cell-level CSV failure. `row` is the 1-based data row (header excluded).
class TypeParseFailure : public Error {
 public:
  TypeParseFailure(std::size_t row, std::string column, const std::string& cell)
      : Error(ErrorCode::kTypeParseFailure,
              "row " + std::to_string(row) + ", column '" + column + "': cannot parse '" + cell +
                  "' as a real"),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// Lexer/parser failure with the byte offset into the statement.
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& message)
      : Error(ErrorCode::kSyntaxError, "at position " + std::to_string(position) + ": " + message),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class UnknownCategory : public Error {
 public:
  UnknownCategory(std::string value, std::string column)
      : Error(ErrorCode::kUnknownCategory,
              "value '" + value + "' not in dictionary of column '" + column + "'"),
        value_(std::move(value)),
        column_(std::move(column)) {}

  const std::string& value() const noexcept { return value_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::string value_;
  std::string column_;
};

}  // namespace predaqp
