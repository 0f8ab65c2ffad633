#include "paincast/error.hpp"

namespace paincast {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnparseableRow: return "UnparseableRow";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::IncomparableSeries: return "IncomparableSeries";
    case ErrorCode::EmptyClusterInput: return "EmptyClusterInput";
    case ErrorCode::TooFewSeries: return "TooFewSeries";
    case ErrorCode::LabelSetMismatch: return "LabelSetMismatch";
    case ErrorCode::SingleCluster: return "SingleCluster";
    case ErrorCode::KMismatch: return "KMismatch";
    case ErrorCode::ConstantSeries: return "ConstantSeries";
    case ErrorCode::SingularRegression: return "SingularRegression";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::DegenerateSeries: return "DegenerateSeries";
    case ErrorCode::AllFitsFailed: return "AllFitsFailed";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::WindowTooShort: return "WindowTooShort";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::FeatureWidthMismatch: return "FeatureWidthMismatch";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::ConstantTruth: return "ConstantTruth";
    case ErrorCode::InsufficientYears: return "InsufficientYears";
    case ErrorCode::PatientTooShort: return "PatientTooShort";
  }
  return "Unknown";
}

ErrorKind kind_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig:
      return ErrorKind::Config;
    case ErrorCode::NonConvergence:
    case ErrorCode::AllFitsFailed:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::BatchTooSmall:
    case ErrorCode::WindowTooShort:
    case ErrorCode::FeatureWidthMismatch:
      return ErrorKind::Model;
    default:
      return ErrorKind::Data;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace paincast
