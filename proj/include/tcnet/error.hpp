#pragma once

#include <stdexcept>
#include <string>

namespace tcnet {

enum class ErrorKind {
  DimensionMismatch,
  NonFiniteLoss,
  InvalidArgument,
  UnknownCategory,
  UnparsableNumeric,
  MissingColumn,
  TooFewMinority,
  EmptySubset,
  GroupSizeExceedsCircles,
  InfeasibleMinorityRate,
  EmptyColumn,
  NoCategoricalColumns,
  EmptyTarget,
  LabelAccess,
  SchemaMismatch,
  BatchSizeMismatch,
  LengthMismatch,
  RowCountMismatch,
  OutOfRange,
  EmptyDataset,
  UnlabeledDataset,
  CircleMismatch,
  ZeroTestingMetric,
  EmptySelection,
  DegeneratePerturbation,
  Io,
  Format,
  Config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::NonFiniteLoss: return "non-finite-loss";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::UnknownCategory: return "unknown-category";
    case ErrorKind::UnparsableNumeric: return "unparsable-numeric";
    case ErrorKind::MissingColumn: return "missing-column";
    case ErrorKind::TooFewMinority: return "too-few-minority";
    case ErrorKind::EmptySubset: return "empty-subset";
    case ErrorKind::GroupSizeExceedsCircles: return "group-size-exceeds-circles";
    case ErrorKind::InfeasibleMinorityRate: return "infeasible-minority-rate";
    case ErrorKind::EmptyColumn: return "empty-column";
    case ErrorKind::NoCategoricalColumns: return "no-categorical-columns";
    case ErrorKind::EmptyTarget: return "empty-target";
    case ErrorKind::LabelAccess: return "label-access";
    case ErrorKind::SchemaMismatch: return "schema-mismatch";
    case ErrorKind::BatchSizeMismatch: return "batch-size-mismatch";
    case ErrorKind::LengthMismatch: return "length-mismatch";
    case ErrorKind::RowCountMismatch: return "row-count-mismatch";
    case ErrorKind::OutOfRange: return "out-of-range";
    case ErrorKind::EmptyDataset: return "empty-dataset";
    case ErrorKind::UnlabeledDataset: return "unlabeled-dataset";
    case ErrorKind::CircleMismatch: return "circle-mismatch";
    case ErrorKind::ZeroTestingMetric: return "zero-testing-metric";
    case ErrorKind::EmptySelection: return "empty-selection";
    case ErrorKind::DegeneratePerturbation: return "degenerate-perturbation";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace tcnet
