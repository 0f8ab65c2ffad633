#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace paincast {

/// Coarse error category; the CLI maps these onto exit codes.
enum class ErrorKind { Config, Data, Model };

enum class ErrorCode {
  InvalidConfig,
  Io,
  MalformedHeader,
  UnparseableRow,
  ShapeMismatch,
  EmptySequence,
  IncomparableSeries,
  EmptyClusterInput,
  TooFewSeries,
  LabelSetMismatch,
  SingleCluster,
  KMismatch,
  ConstantSeries,
  SingularRegression,
  NonConvergence,
  DegenerateSeries,
  AllFitsFailed,
  NonFiniteLoss,
  BatchTooSmall,
  WindowTooShort,
  EmptyTrainingSet,
  FeatureWidthMismatch,
  SingleClass,
  LengthMismatch,
  Empty,
  ConstantTruth,
  InsufficientYears,
  PatientTooShort,
};

std::string_view to_string(ErrorCode code) noexcept;
ErrorKind kind_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace paincast
