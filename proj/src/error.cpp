#include "predaqp/error.hpp"

namespace predaqp {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kTypeParseFailure: return "TypeParseFailure";
    case ErrorCode::kEmptyTable: return "EmptyTable";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDegenerateColumn: return "DegenerateColumn";
    case ErrorCode::kUnknownCategory: return "UnknownCategory";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNoForwardCache: return "NoForwardCache";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kSyntaxError: return "SyntaxError";
    case ErrorCode::kUnknownColumn: return "UnknownColumn";
    case ErrorCode::kTypeMismatch: return "TypeMismatch";
    case ErrorCode::kUnsupportedQuery: return "UnsupportedQuery";
    case ErrorCode::kDnfBlowup: return "DnfBlowup";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kUnansweredQuery: return "UnansweredQuery";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kEmptyRange: return "EmptyRange";
    case ErrorCode::kUndefinedRelativeError: return "UndefinedRelativeError";
    case ErrorCode::kEmptyTruthGroups: return "EmptyTruthGroups";
  }
  return "Unknown";
}

}  // namespace predaqp
